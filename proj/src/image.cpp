#include "hmte/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmte {

namespace {

std::string next_token(std::istream& in) {
    std::string tok;
    while (in) {
        const int c = in.peek();
        if (c == '#') {
            std::string ignored;
            std::getline(in, ignored);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    in >> tok;
    return tok;
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image " + path.string());
    const std::string magic = next_token(in);
    if (magic != "P5" && magic != "P2") throw std::runtime_error(path.string() + ": not a PGM file");
    const long cols = std::stol(next_token(in));
    const long rows = std::stol(next_token(in));
    const long maxval = std::stol(next_token(in));
    if (cols <= 0 || rows <= 0 || maxval <= 0 || maxval > 255) {
        throw std::runtime_error(path.string() + ": unsupported PGM header");
    }
    Image img(rows, cols);
    if (magic == "P5") {
        in.get();  // single whitespace after maxval
        std::vector<unsigned char> raw(static_cast<std::size_t>(rows * cols));
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
            throw std::runtime_error(path.string() + ": truncated pixel data");
        }
        for (Index i = 0; i < img.size(); ++i) {
            img.data()[i] = static_cast<Real>(raw[static_cast<std::size_t>(i)]) / static_cast<Real>(maxval);
        }
    } else {
        for (Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<Real>(std::stol(next_token(in))) / maxval;
    }
    return img;
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write image " + path.string());
    out << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
    std::vector<unsigned char> raw(static_cast<std::size_t>(image.size()));
    for (Index i = 0; i < image.size(); ++i) {
        const double v = std::clamp(static_cast<double>(image.data()[i]), 0.0, 1.0);
        raw[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw std::runtime_error("failed writing image " + path.string());
}

Image resize_bilinear(const Image& image, Index rows, Index cols) {
    if (image.rows() == rows && image.cols() == cols) return image;
    Image out(rows, cols);
    const double sy = static_cast<double>(image.rows()) / static_cast<double>(rows);
    const double sx = static_cast<double>(image.cols()) / static_cast<double>(cols);
    for (Index r = 0; r < rows; ++r) {
        const double y = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, double(image.rows() - 1));
        const auto y0 = static_cast<Index>(std::floor(y));
        const Index y1 = std::min(y0 + 1, image.rows() - 1);
        const double fy = y - static_cast<double>(y0);
        for (Index c = 0; c < cols; ++c) {
            const double x = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, double(image.cols() - 1));
            const auto x0 = static_cast<Index>(std::floor(x));
            const Index x1 = std::min(x0 + 1, image.cols() - 1);
            const double fx = x - static_cast<double>(x0);
            const double top = (1 - fx) * image(y0, x0) + fx * image(y0, x1);
            const double bottom = (1 - fx) * image(y1, x0) + fx * image(y1, x1);
            out(r, c) = static_cast<Real>((1 - fy) * top + fy * bottom);
        }
    }
    return out;
}

Image resize_nearest(const Image& image, Index rows, Index cols) {
    if (image.rows() == rows && image.cols() == cols) return image;
    Image out(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        const Index sr = std::min(image.rows() - 1, r * image.rows() / rows);
        for (Index c = 0; c < cols; ++c) out(r, c) = image(sr, std::min(image.cols() - 1, c * image.cols() / cols));
    }
    return out;
}

Tensor to_tensor(const Image& image) {
    return Tensor({1, image.rows(), image.cols()}, Eigen::Map<const Buffer>(image.data(), image.size()));
}

Image from_tensor(const Tensor& t) {
    if (t.ndim() != 3 || t.dim(0) != 1) throw ShapeError("from_tensor: expected (1,H,W), got " + to_string(t.shape()));
    Image img(t.dim(1), t.dim(2));
    std::copy(t.data().data(), t.data().data() + t.size(), img.data());
    return img;
}

}  // namespace hmte
