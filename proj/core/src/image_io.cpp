#include "deid/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <stdexcept>

namespace deid {

namespace {

cv::Mat to_mat(const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw std::invalid_argument("save_png: expected [3,H,W], got " + img.shape_str());
    int h = static_cast<int>(img.dim(1));
    int w = static_cast<int>(img.dim(2));
    cv::Mat m(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto& px = m.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c) {
                double v = img.data()[(static_cast<std::size_t>(c) * h + y) * w + x];
                v = (v + 1.0) * 0.5 * 255.0;
                v = std::min(255.0, std::max(0.0, std::round(v)));
                px[2 - c] = static_cast<unsigned char>(v); // OpenCV stores BGR
            }
        }
    return m;
}

Tensor from_mat(const cv::Mat& m) {
    std::size_t h = m.rows, w = m.cols;
    Tensor img({3, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const auto& px = m.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
            for (std::size_t c = 0; c < 3; ++c)
                img.data()[(c * h + y) * w + x] = px[2 - c] / 255.0 * 2.0 - 1.0;
        }
    return img;
}

} // namespace

void save_png(const Tensor& img, const std::string& path) {
    if (!cv::imwrite(path, to_mat(img)))
        throw std::runtime_error("save_png: cannot write " + path);
}

Tensor load_png(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    if (m.empty()) throw std::runtime_error("load_png: cannot decode " + path);
    return from_mat(m);
}

Tensor load_and_fit(const std::string& path, std::size_t resolution) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    if (m.empty()) throw std::runtime_error("load_and_fit: cannot decode " + path);
    int side = std::min(m.rows, m.cols);
    int y0 = (m.rows - side) / 2;
    int x0 = (m.cols - side) / 2;
    cv::Mat crop = m(cv::Rect(x0, y0, side, side));
    cv::Mat out;
    cv::resize(crop, out, cv::Size(static_cast<int>(resolution), static_cast<int>(resolution)),
               0, 0, cv::INTER_AREA);
    return from_mat(out);
}

} // namespace deid
