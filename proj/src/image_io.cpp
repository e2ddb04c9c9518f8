#include "lowlight/image_io.hpp"

#include <cmath>

#include <opencv2/imgcodecs.hpp>

#include "lowlight/errors.hpp"

namespace lowlight {

std::uint8_t to_u8(double v) {
    v = std::min(1.0, std::max(0.0, v));
    // nearbyint honours the default round-half-even mode.
    return static_cast<std::uint8_t>(std::nearbyint(v * 255.0));
}

double from_u8(std::uint8_t v) { return static_cast<double>(v) / 255.0; }

Image quantize_8bit(const Image& img) {
    Image out(img.height, img.width);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        out.data[i] = from_u8(to_u8(img.data[i]));
    return out;
}

Image load_image(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    if (m.empty()) throw IngestionError("failed to decode image: " + path);
    Image img(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y) {
        const cv::Vec3b* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < m.cols; ++x) {
            // OpenCV decodes BGR.
            img.at(0, y, x) = from_u8(row[x][2]);
            img.at(1, y, x) = from_u8(row[x][1]);
            img.at(2, y, x) = from_u8(row[x][0]);
        }
    }
    return img;
}

void save_image(const std::string& path, const Image& img) {
    cv::Mat m(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
        cv::Vec3b* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.width; ++x) {
            row[x][2] = to_u8(img.at(0, y, x));
            row[x][1] = to_u8(img.at(1, y, x));
            row[x][0] = to_u8(img.at(2, y, x));
        }
    }
    if (!cv::imwrite(path, m)) throw IngestionError("failed to write image: " + path);
}

}  // namespace lowlight
