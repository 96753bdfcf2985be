#include "dugi/image.hpp"

#include "dugi/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

namespace dugi {

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on " + path);
    return bytes;
}

// Reads one whitespace-delimited PGM header token, skipping # comments.
std::string pgm_token(const std::vector<uint8_t>& b, size_t& pos, const std::string& path) {
    while (pos < b.size()) {
        if (std::isspace(b[pos])) {
            ++pos;
        } else if (b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < b.size() && !std::isspace(b[pos]) && b[pos] != '#') {
        tok += static_cast<char>(b[pos++]);
    }
    if (tok.empty()) throw FormatError(path + ": truncated PGM header");
    return tok;
}

int pgm_int(const std::vector<uint8_t>& b, size_t& pos, const std::string& path) {
    const std::string tok = pgm_token(b, pos, path);
    try {
        size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw FormatError(path + ": bad PGM header token '" + tok + "'");
    }
}

const uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

uint32_t be32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

std::vector<uint8_t> zlib_inflate(const std::vector<uint8_t>& in, size_t expect,
                                  const std::string& path) {
    std::vector<uint8_t> out(expect);
    uLongf out_len = static_cast<uLongf>(expect);
    const int rc = uncompress(out.data(), &out_len, in.data(), static_cast<uLong>(in.size()));
    if (rc != Z_OK || out_len != expect) {
        throw FormatError(path + ": PNG pixel data did not decompress to the expected size");
    }
    return out;
}

uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
    if (pb <= pc) return static_cast<uint8_t>(b);
    return static_cast<uint8_t>(c);
}

} // namespace

GrayImage make_image(int height, int width, uint8_t fill) {
    if (height <= 0 || width <= 0) throw PreconditionError("image dimensions must be positive");
    GrayImage img;
    img.height = height;
    img.width = width;
    img.pixels.assign(static_cast<size_t>(height) * width, fill);
    return img;
}

GrayImage load_pgm(const std::string& path) {
    const std::vector<uint8_t> b = read_file(path);
    size_t pos = 0;
    const std::string magic = pgm_token(b, pos, path);
    if (magic != "P5") throw FormatError(path + ": not a binary PGM (magic '" + magic + "')");
    const int w = pgm_int(b, pos, path);
    const int h = pgm_int(b, pos, path);
    const int maxval = pgm_int(b, pos, path);
    if (w <= 0 || h <= 0) throw FormatError(path + ": non-positive PGM dimensions");
    if (maxval != 255) {
        throw FormatError(path + ": unsupported PGM maxval " + std::to_string(maxval) +
                          " (only 8-bit, maxval 255)");
    }
    if (pos >= b.size() || !std::isspace(b[pos])) {
        throw FormatError(path + ": missing whitespace after PGM maxval");
    }
    ++pos;
    const size_t need = static_cast<size_t>(w) * h;
    if (b.size() < pos + need) throw FormatError(path + ": PGM pixel data truncated");
    GrayImage img = make_image(h, w);
    std::memcpy(img.pixels.data(), b.data() + pos, need);
    img.source_id = path;
    return img;
}

GrayImage load_png(const std::string& path) {
    const std::vector<uint8_t> b = read_file(path);
    if (b.size() < 8 || std::memcmp(b.data(), kPngSig, 8) != 0) {
        throw FormatError(path + ": not a PNG file");
    }
    size_t pos = 8;
    int w = 0, h = 0, depth = 0, color = 0;
    bool have_header = false;
    std::vector<uint8_t> idat;
    while (pos + 8 <= b.size()) {
        const uint32_t len = be32(b.data() + pos);
        const std::string type(reinterpret_cast<const char*>(b.data() + pos + 4), 4);
        pos += 8;
        if (pos + len + 4 > b.size()) throw FormatError(path + ": PNG chunk truncated");
        const uint8_t* data = b.data() + pos;
        if (type == "IHDR") {
            if (len != 13) throw FormatError(path + ": bad IHDR length");
            w = static_cast<int>(be32(data));
            h = static_cast<int>(be32(data + 4));
            depth = data[8];
            color = data[9];
            if (data[12] != 0) throw FormatError(path + ": interlaced PNG unsupported");
            have_header = true;
        } else if (type == "IDAT") {
            idat.insert(idat.end(), data, data + len);
        } else if (type == "IEND") {
            break;
        }
        pos += len + 4;   // skip data + CRC
    }
    if (!have_header || w <= 0 || h <= 0) throw FormatError(path + ": missing PNG header");
    if (depth != 8) {
        throw FormatError(path + ": unsupported PNG bit depth " + std::to_string(depth) +
                          " (only 8-bit)");
    }
    int channels = 0;
    switch (color) {
        case 0: channels = 1; break;   // gray
        case 2: channels = 3; break;   // rgb
        case 4: channels = 2; break;   // gray + alpha
        case 6: channels = 4; break;   // rgb + alpha
        default:
            throw FormatError(path + ": unsupported PNG color type " + std::to_string(color));
    }
    const size_t stride = static_cast<size_t>(w) * channels;
    std::vector<uint8_t> raw =
        zlib_inflate(idat, (stride + 1) * static_cast<size_t>(h), path);

    // Undo per-scanline filters in place.
    std::vector<uint8_t> prev(stride, 0);
    GrayImage img = make_image(h, w);
    for (int r = 0; r < h; ++r) {
        const uint8_t filter = raw[(stride + 1) * static_cast<size_t>(r)];
        uint8_t* line = raw.data() + (stride + 1) * static_cast<size_t>(r) + 1;
        for (size_t i = 0; i < stride; ++i) {
            const int left = i >= static_cast<size_t>(channels) ? line[i - channels] : 0;
            const int up = prev[i];
            const int ul = i >= static_cast<size_t>(channels) ? prev[i - channels] : 0;
            switch (filter) {
                case 0: break;
                case 1: line[i] = static_cast<uint8_t>(line[i] + left); break;
                case 2: line[i] = static_cast<uint8_t>(line[i] + up); break;
                case 3: line[i] = static_cast<uint8_t>(line[i] + (left + up) / 2); break;
                case 4: line[i] = static_cast<uint8_t>(line[i] + paeth(left, up, ul)); break;
                default: throw FormatError(path + ": bad PNG filter type");
            }
        }
        std::memcpy(prev.data(), line, stride);
        for (int c = 0; c < w; ++c) {
            const uint8_t* px = line + static_cast<size_t>(c) * channels;
            int v;
            if (channels >= 3) {
                v = static_cast<int>(std::lround((px[0] + px[1] + px[2]) / 3.0));
            } else {
                v = px[0];
            }
            img.at(r, c) = static_cast<uint8_t>(v);
        }
    }
    img.source_id = path;
    return img;
}

GrayImage load_gray(const std::string& path) {
    const std::vector<uint8_t> head = read_file(path);
    if (head.size() >= 8 && std::memcmp(head.data(), kPngSig, 8) == 0) return load_png(path);
    if (head.size() >= 2 && head[0] == 'P' && head[1] == '5') return load_pgm(path);
    throw FormatError(path + ": unrecognized image format (want binary PGM or PNG)");
}

void save_pgm(const GrayImage& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoError("write failure on " + path);
}

Tensor image_tensor(const GrayImage& img, double scl) {
    std::vector<double> v(img.pixels.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = img.pixels[i] * scl;
    return Tensor::from_data({img.height, img.width}, std::move(v));
}

GrayImage crop_black_borders(const GrayImage& img, int zero_threshold) {
    if (zero_threshold < 0) throw PreconditionError("zero_threshold must be >= 0");
    auto row_dark = [&](int r) {
        for (int c = 0; c < img.width; ++c) {
            if (img.at(r, c) > zero_threshold) return false;
        }
        return true;
    };
    auto col_dark = [&](int c, int r0, int r1) {
        for (int r = r0; r < r1; ++r) {
            if (img.at(r, c) > zero_threshold) return false;
        }
        return true;
    };
    int top = 0, bottom = img.height;
    while (top < bottom && row_dark(top)) ++top;
    if (top == bottom) {
        throw DegenerateImageError(img.source_id.empty() ? "image is entirely black"
                                                         : img.source_id + ": image is entirely black");
    }
    while (bottom > top && row_dark(bottom - 1)) --bottom;
    int left = 0, right = img.width;
    while (left < right && col_dark(left, top, bottom)) ++left;
    while (right > left && col_dark(right - 1, top, bottom)) --right;

    GrayImage out = make_image(bottom - top, right - left);
    out.source_id = img.source_id;
    for (int r = 0; r < out.height; ++r) {
        std::memcpy(out.pixels.data() + static_cast<size_t>(r) * out.width,
                    img.pixels.data() + static_cast<size_t>(r + top) * img.width + left,
                    static_cast<size_t>(out.width));
    }
    return out;
}

GrayImage random_crop(const GrayImage& img, int size, Rng& rng) {
    if (size <= 0 || size > img.height || size > img.width) {
        throw PreconditionError("random_crop: size " + std::to_string(size) +
                                " exceeds image " + std::to_string(img.width) + "x" +
                                std::to_string(img.height));
    }
    const int r0 = rng.uniform_int(img.height - size + 1);
    const int c0 = rng.uniform_int(img.width - size + 1);
    GrayImage out = make_image(size, size);
    out.source_id = img.source_id;
    for (int r = 0; r < size; ++r) {
        std::memcpy(out.pixels.data() + static_cast<size_t>(r) * size,
                    img.pixels.data() + static_cast<size_t>(r + r0) * img.width + c0,
                    static_cast<size_t>(size));
    }
    return out;
}

std::vector<double> dedup_feature(const GrayImage& img) {
    if (img.pixels.empty()) throw PreconditionError("dedup_feature: empty image");
    std::vector<double> f(128, 0.0);
    const double inv_n = 1.0 / static_cast<double>(img.pixels.size());
    for (uint8_t p : img.pixels) f[p >> 2] += inv_n;

    for (int i = 0; i < 8; ++i) {
        int r0 = i * img.height / 8, r1 = (i + 1) * img.height / 8;
        if (r1 <= r0) {
            r0 = std::min(r0, img.height - 1);
            r1 = r0 + 1;
        }
        for (int j = 0; j < 8; ++j) {
            int c0 = j * img.width / 8, c1 = (j + 1) * img.width / 8;
            if (c1 <= c0) {
                c0 = std::min(c0, img.width - 1);
                c1 = c0 + 1;
            }
            double acc = 0.0;
            for (int r = r0; r < r1; ++r) {
                for (int c = c0; c < c1; ++c) acc += img.at(r, c);
            }
            f[64 + i * 8 + j] = acc / (255.0 * (r1 - r0) * (c1 - c0));
        }
    }

    double norm = 0.0;
    for (double v : f) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
        f.assign(128, 0.0);
        f[0] = 1.0;
        return f;
    }
    for (double& v : f) v /= norm;
    return f;
}

void dedup_scan(std::vector<CorpusEntry>& entries, double threshold, uint64_t seed) {
    if (threshold <= 0.0 || threshold > 1.0) {
        throw PreconditionError("dedup threshold must be in (0, 1]");
    }
    std::map<std::string, std::vector<size_t>> groups;
    for (size_t i = 0; i < entries.size(); ++i) {
        const CorpusEntry& e = entries[i];
        double norm = 0.0;
        for (double v : e.feature) norm += v * v;
        if (std::abs(std::sqrt(norm) - 1.0) > 1e-9) {
            throw PreconditionError("dedup_scan: feature of " + e.path + " is not unit-norm");
        }
        groups[e.scene_group].push_back(i);
    }
    for (auto& [scene, idx] : groups) {
        Rng rng(seed ^ fnv1a(scene));
        rng.shuffle(idx);
        const size_t anchor = idx.front();
        entries[anchor].kept = true;
        entries[anchor].max_sim = 0.0;
        const std::vector<double>& af = entries[anchor].feature;
        for (size_t k = 1; k < idx.size(); ++k) {
            CorpusEntry& e = entries[idx[k]];
            if (e.feature.size() != af.size()) {
                throw PreconditionError("dedup_scan: feature length mismatch in scene " + scene);
            }
            double dot = 0.0;
            for (size_t j = 0; j < af.size(); ++j) dot += af[j] * e.feature[j];
            e.max_sim = dot;
            e.kept = !(dot > threshold);
        }
    }
}

ResolutionStats resolution_report(const std::vector<std::string>& paths) {
    ResolutionStats stats;
    for (const std::string& p : paths) {
        try {
            const GrayImage img = load_gray(p);
            ++stats.counts[{img.width, img.height}];
            ++stats.total;
        } catch (const std::exception& e) {
            ++stats.unreadable;
            stats.warnings.push_back(e.what());
        }
    }
    return stats;
}

void write_resolution_csv(const ResolutionStats& stats, const std::string& path) {
    std::vector<std::pair<std::pair<int, int>, long long>> rows(stats.counts.begin(),
                                                                stats.counts.end());
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "width,height,count\n";
    for (const auto& [wh, count] : rows) {
        out << wh.first << "," << wh.second << "," << count << "\n";
    }
    if (!out) throw IoError("write failure on " + path);
}

} // namespace dugi
