#include "vmsvae/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "vmsvae/common.hpp"

namespace vmsvae {

void validate_map(const VmsMap& m, const std::string& context) {
    if (m.true_channel.size() != static_cast<size_t>(kMapCells) ||
        m.false_channel.size() != static_cast<size_t>(kMapCells)) {
        throw ValidationError(context + ": VMS channels must be " + std::to_string(kMapSize) +
                              "x" + std::to_string(kMapSize));
    }
    for (int i = 0; i < kMapCells; ++i) {
        float t = m.true_channel[i], f = m.false_channel[i];
        if (!(t >= 0.0f && t <= 1.0f) || !(f >= 0.0f && f <= 1.0f)) {
            throw ValidationError(context + ": VMS value outside [0,1]");
        }
    }
}

namespace {

cv::Mat read_and_resize(const std::string& path, int flags) {
    cv::Mat img = cv::imread(path, flags);
    if (img.empty()) {
        throw RuntimeFault("could not decode image: " + path);
    }
    if (img.rows != kMapSize || img.cols != kMapSize) {
        cv::Mat resized;
        cv::resize(img, resized, cv::Size(kMapSize, kMapSize), 0, 0, cv::INTER_LINEAR);
        return resized;
    }
    return img;
}

}  // namespace

std::vector<uint8_t> load_image_rgb(const std::string& path) {
    cv::Mat bgr = read_and_resize(path, cv::IMREAD_COLOR);
    std::vector<uint8_t> out(static_cast<size_t>(kMapCells) * 3);
    for (int r = 0; r < kMapSize; ++r) {
        const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(r);
        for (int c = 0; c < kMapSize; ++c) {
            size_t base = (static_cast<size_t>(r) * kMapSize + c) * 3;
            out[base + 0] = row[c][2];
            out[base + 1] = row[c][1];
            out[base + 2] = row[c][0];
        }
    }
    return out;
}

VmsMap load_vms_png(const std::string& path) {
    cv::Mat bgr = read_and_resize(path, cv::IMREAD_COLOR);
    VmsMap m = VmsMap::zeros();
    for (int r = 0; r < kMapSize; ++r) {
        const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(r);
        for (int c = 0; c < kMapSize; ++c) {
            m.t(r, c) = static_cast<float>(row[c][1]) / 255.0f;  // green
            m.f(r, c) = static_cast<float>(row[c][2]) / 255.0f;  // red
        }
    }
    return m;
}

void save_vms_png(const VmsMap& m, const std::string& path) {
    cv::Mat bgr(kMapSize, kMapSize, CV_8UC3);
    for (int r = 0; r < kMapSize; ++r) {
        cv::Vec3b* row = bgr.ptr<cv::Vec3b>(r);
        for (int c = 0; c < kMapSize; ++c) {
            row[c][0] = 0;
            row[c][1] = static_cast<uint8_t>(std::lround(m.t(r, c) * 255.0f));
            row[c][2] = static_cast<uint8_t>(std::lround(m.f(r, c) * 255.0f));
        }
    }
    if (!cv::imwrite(path, bgr)) {
        throw RuntimeFault("could not write PNG: " + path);
    }
}

void save_image_rgb(const std::vector<uint8_t>& rgb, const std::string& path) {
    cv::Mat bgr(kMapSize, kMapSize, CV_8UC3);
    for (int r = 0; r < kMapSize; ++r) {
        cv::Vec3b* row = bgr.ptr<cv::Vec3b>(r);
        for (int c = 0; c < kMapSize; ++c) {
            size_t base = (static_cast<size_t>(r) * kMapSize + c) * 3;
            row[c][0] = rgb[base + 2];
            row[c][1] = rgb[base + 1];
            row[c][2] = rgb[base + 0];
        }
    }
    if (!cv::imwrite(path, bgr)) {
        throw RuntimeFault("could not write image: " + path);
    }
}

}  // namespace vmsvae
