#include "refocs/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

#include "refocs/errors.hpp"

namespace refocs {

std::optional<Tensor> load_image_rgb(const std::filesystem::path& file, int height, int width) {
    cv::Mat img = cv::imread(file.string(), cv::IMREAD_COLOR);
    if (img.empty()) return std::nullopt;
    if (img.rows != height || img.cols != width) {
        cv::Mat resized;
        // bilinear on 8-bit data keeps the result platform-stable
        cv::resize(img, resized, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
        img = resized;
    }
    Tensor out({3, height, width});
    for (int i = 0; i < height; ++i) {
        const cv::Vec3b* row = img.ptr<cv::Vec3b>(i);
        for (int j = 0; j < width; ++j) {
            // OpenCV loads BGR
            out[(0 * static_cast<std::size_t>(height) + i) * width + j] = row[j][2] / 255.0;
            out[(1 * static_cast<std::size_t>(height) + i) * width + j] = row[j][1] / 255.0;
            out[(2 * static_cast<std::size_t>(height) + i) * width + j] = row[j][0] / 255.0;
        }
    }
    return out;
}

void save_image_rgb(const std::filesystem::path& file, const Tensor& pixels) {
    if (pixels.ndim() != 3 || pixels.dim(0) != 3) {
        throw DataError("save_image_rgb: expected [3,H,W] pixels");
    }
    const int h = pixels.dim(1), w = pixels.dim(2);
    cv::Mat img(h, w, CV_8UC3);
    auto to_byte = [](double v) {
        return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    };
    for (int i = 0; i < h; ++i) {
        cv::Vec3b* row = img.ptr<cv::Vec3b>(i);
        for (int j = 0; j < w; ++j) {
            row[j][2] = to_byte(pixels[(0 * static_cast<std::size_t>(h) + i) * w + j]);
            row[j][1] = to_byte(pixels[(1 * static_cast<std::size_t>(h) + i) * w + j]);
            row[j][0] = to_byte(pixels[(2 * static_cast<std::size_t>(h) + i) * w + j]);
        }
    }
    if (!cv::imwrite(file.string(), img)) {
        throw DataError("failed to write image: " + file.string());
    }
}

}  // namespace refocs
