#pragma once

#include <functional>

#include "deid/msssim.hpp"
#include "deid/ops.hpp"

namespace deid {
namespace losses {

/// Batch image -> batch embedding.
using Encoder = std::function<Variable(const Variable&)>;
/// Batch latent -> [N,1] logits.
using Critic = std::function<Variable(const Variable&)>;

struct LossWeights {
    double lambda1 = 0.1;   // identity
    double lambda2 = 60.0;  // landmark
    double lambda3 = 10.0;  // reconstruction
    double lambda4 = 1.0;   // adversarial model term
    double lambda5 = 0.01;  // adversarial visual term
    double gamma = 10.0;    // R1 coefficient
    double alpha = 0.84;    // mix-loss weight
    double delta = 0.5;     // latent clip radius

    void validate() const;
};

/// Non-saturating discriminator loss with R1 regularization.
/// real_ws must be a grad-tracked leaf so the penalty can differentiate
/// through the critic.
Variable loss_adv_d(const Critic& critic, const Variable& real_ws, const Variable& fake_ws,
                    double gamma);

/// Non-saturating generator-side loss.
Variable loss_adv_g(const Critic& critic, const Variable& fake_ws);

/// L1 cycle consistency between identity embeddings (sum over components,
/// mean over batch).
Variable loss_identity(const Encoder& en_id, const Variable& img_id, const Variable& img_out);

/// L2 cycle consistency between landmark codes (per-sample Euclidean norm,
/// mean over batch).
Variable loss_landmark(const Encoder& en_lnd, const Variable& img_expr, const Variable& img_out);

/// Mix reconstruction loss: alpha*(1-MS-SSIM) + (1-alpha)*mean-abs.
/// Contributes 0 on cross-face batches; the flag comes from the batch
/// constructor, never from pixel comparison.
Variable loss_reconstruct(const Variable& img_id, const Variable& img_out, double alpha,
                          bool same_face, std::size_t msssim_scales = 3);

Variable total_generator_loss(const Variable& l_id, const Variable& l_landmark,
                              const Variable& l_reconstruct, const LossWeights& w);

/// Cosine similarity between identity embeddings (per sample, mean over
/// batch); minimized in stage 2.
Variable loss_id_model(const Encoder& en_id, const Variable& img_id, const Variable& img_adv);

/// Landmark-code distance between original and adversarial image.
Variable loss_id_visual(const Encoder& en_lnd, const Variable& img, const Variable& img_adv);

Variable total_adversarial_loss(const Variable& model_term, const Variable& visual_term,
                                const LossWeights& w);

/// Componentwise projection of w_adv onto the inf-ball of radius delta
/// around w. Idempotent; gradients flow through unclamped components.
Variable clip_latent(const Variable& w_adv, const Variable& w, double delta);

} // namespace losses
} // namespace deid
