#include "deid/losses.hpp"

#include <stdexcept>

namespace deid {
namespace losses {

namespace op = ops;

void LossWeights::validate() const {
    for (double v : {lambda1, lambda2, lambda3, lambda4, lambda5, gamma})
        if (!(v >= 0.0)) throw std::invalid_argument("loss weights must be nonnegative");
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must be in [0,1]");
    if (delta < 0.0) throw std::invalid_argument("delta must be nonnegative");
}

namespace {

void check_nonempty(const Variable& batch, const char* what) {
    if (batch.value().size() == 0 || batch.value().dim(0) == 0)
        throw std::invalid_argument(std::string(what) + ": empty batch");
}

// per-sample embedding rows -> [N,1] cosine values
Variable row_cosine(const Variable& a, const Variable& b) {
    Variable dot = op::sum_cols(op::mul(a, b));
    Variable na = op::sqrt(op::sum_cols(op::square(a)));
    Variable nb = op::sqrt(op::sum_cols(op::square(b)));
    for (std::size_t i = 0; i < na.value().size(); ++i)
        if (na.value()[i] == 0.0 || nb.value()[i] == 0.0)
            throw std::domain_error("cosine: zero-norm embedding");
    return op::div(dot, op::mul(na, nb));
}

} // namespace

Variable loss_adv_d(const Critic& critic, const Variable& real_ws, const Variable& fake_ws,
                    double gamma) {
    check_nonempty(real_ws, "loss_adv_d real");
    check_nonempty(fake_ws, "loss_adv_d fake");
    Variable logit_r = critic(real_ws);
    Variable logit_f = critic(fake_ws);
    // -E log D(real) - E log(1 - D(fake)), stable logit form
    Variable loss = op::add(op::neg(op::mean_all(op::log_sigmoid(logit_r))),
                            op::neg(op::mean_all(op::log_sigmoid(op::neg(logit_f)))));
    if (gamma > 0.0 && real_ws.requires_grad()) {
        Variable gw = autograd::grad(op::sum_all(logit_r), {real_ws}, /*create_graph=*/true)[0];
        double inv_n = 1.0 / static_cast<double>(real_ws.value().dim(0));
        Variable r1 = op::scale(op::sum_all(op::square(gw)), inv_n);
        loss = op::add(loss, op::scale(r1, gamma / 2.0));
    }
    return loss;
}

Variable loss_adv_g(const Critic& critic, const Variable& fake_ws) {
    check_nonempty(fake_ws, "loss_adv_g");
    return op::neg(op::mean_all(op::log_sigmoid(critic(fake_ws))));
}

Variable loss_identity(const Encoder& en_id, const Variable& img_id, const Variable& img_out) {
    Variable ea = en_id(img_id);
    Variable eb = en_id(img_out);
    if (!ea.value().same_shape(eb.value()))
        throw std::invalid_argument("loss_identity: embedding shape mismatch");
    return op::mean_all(op::sum_cols(op::abs(op::sub(ea, eb))));
}

Variable loss_landmark(const Encoder& en_lnd, const Variable& img_expr, const Variable& img_out) {
    Variable ea = en_lnd(img_expr);
    Variable eb = en_lnd(img_out);
    if (!ea.value().same_shape(eb.value()))
        throw std::invalid_argument("loss_landmark: code shape mismatch");
    return op::mean_all(op::sqrt(op::sum_cols(op::square(op::sub(ea, eb)))));
}

Variable loss_reconstruct(const Variable& img_id, const Variable& img_out, double alpha,
                          bool same_face, std::size_t msssim_scales) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("loss_reconstruct: bad alpha");
    if (!same_face) return Variable::constant(Tensor::scalar(0.0));
    Variable ms = msssim::ms_ssim(img_id, img_out, msssim_scales);
    Variable l1 = op::mean_all(op::abs(op::sub(img_id, img_out)));
    return op::add(op::scale(op::add_scalar(op::neg(ms), 1.0), alpha),
                   op::scale(l1, 1.0 - alpha));
}

Variable total_generator_loss(const Variable& l_id, const Variable& l_landmark,
                              const Variable& l_reconstruct, const LossWeights& w) {
    return op::add(op::add(op::scale(l_id, w.lambda1), op::scale(l_landmark, w.lambda2)),
                   op::scale(l_reconstruct, w.lambda3));
}

Variable loss_id_model(const Encoder& en_id, const Variable& img_id, const Variable& img_adv) {
    Variable ea = en_id(img_id);
    Variable eb = en_id(img_adv);
    return op::mean_all(row_cosine(ea, eb));
}

Variable loss_id_visual(const Encoder& en_lnd, const Variable& img, const Variable& img_adv) {
    return loss_landmark(en_lnd, img, img_adv);
}

Variable total_adversarial_loss(const Variable& model_term, const Variable& visual_term,
                                const LossWeights& w) {
    return op::add(op::scale(model_term, w.lambda4), op::scale(visual_term, w.lambda5));
}

Variable clip_latent(const Variable& w_adv, const Variable& w, double delta) {
    if (!w_adv.value().same_shape(w.value()))
        throw std::invalid_argument("clip_latent: dimension mismatch");
    if (delta < 0.0) throw std::invalid_argument("clip_latent: negative delta");
    return op::add(w, op::clamp_const(op::sub(w_adv, w), -delta, delta));
}

} // namespace losses
} // namespace deid
