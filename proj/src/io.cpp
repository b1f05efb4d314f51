#include "ranklsd/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace ranklsd {

namespace {

constexpr char kMagic[] = "RLCK1\n";

[[noreturn]] void fail(const std::string& msg) { throw TensorError("io: " + msg); }

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) fail("truncated stream");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint64_t get_u64(std::istream& is) {
    std::uint64_t lo = get_u32(is);
    std::uint64_t hi = get_u32(is);
    return lo | (hi << 32);
}

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& is) {
    std::uint32_t n = get_u32(is);
    if (n > (1u << 24)) fail("implausible string length");
    std::string s(n, '\0');
    if (n && !is.read(s.data(), n)) fail("truncated stream");
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& cfg, const Model& model,
                     const AdamW* opt, int step) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("cannot write '" + path + "'");
    os.write(kMagic, sizeof kMagic - 1);
    put_str(os, to_text(cfg));
    put_u32(os, static_cast<std::uint32_t>(step));
    const auto& params = model.params();
    put_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        put_str(os, p.name);
        save_tensor(os, p.t);
    }
    const bool with_opt = opt && opt->m.size() == params.size();
    os.put(with_opt ? 1 : 0);
    if (with_opt) {
        put_u64(os, static_cast<std::uint64_t>(opt->t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            put_u64(os, opt->m[i].size());
            for (double d : opt->m[i]) put_f64(os, d);
            for (double d : opt->v[i]) put_f64(os, d);
        }
    }
    if (!os) fail("write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail("cannot open '" + path + "'");
    char magic[sizeof kMagic - 1];
    if (!is.read(magic, sizeof magic) || !std::equal(magic, magic + sizeof magic, kMagic))
        fail("'" + path + "' is not a checkpoint");
    Checkpoint ck;
    ck.config = parse_run_config(get_str(is));
    ck.step = static_cast<int>(get_u32(is));
    const std::uint32_t n = get_u32(is);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = get_str(is);
        ck.tensors.emplace_back(std::move(name), load_tensor(is));
    }
    int flag = is.get();
    if (flag == EOF) fail("truncated stream");
    ck.has_opt = flag != 0;
    if (ck.has_opt) {
        ck.opt_t = static_cast<long>(get_u64(is));
        for (std::uint32_t i = 0; i < n; ++i) {
            std::uint64_t len = get_u64(is);
            if (len != static_cast<std::uint64_t>(ck.tensors[i].second.numel()))
                fail("optimizer state does not match its tensor");
            std::vector<double> m(len), v(len);
            for (auto& d : m) d = get_f64(is);
            for (auto& d : v) d = get_f64(is);
            ck.m.push_back(std::move(m));
            ck.v.push_back(std::move(v));
        }
    }
    return ck;
}

void apply_checkpoint(const Checkpoint& ck, Model& model, AdamW* opt) {
    auto& params = model.params();
    if (ck.tensors.size() != params.size())
        fail("checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, model has " +
             std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, t] = ck.tensors[i];
        if (name != params[i].name)
            fail("parameter order mismatch at '" + name + "' vs '" + params[i].name + "'");
        if (t.shape() != params[i].t.shape()) fail("shape mismatch for '" + name + "'");
        std::copy(t.data(), t.data() + t.numel(), params[i].t.data());
        params[i].t.zero_grad();
    }
    if (opt) {
        if (ck.has_opt) {
            opt->t = ck.opt_t;
            opt->m = ck.m;
            opt->v = ck.v;
        } else {
            opt->t = 0;
            opt->m.clear();
            opt->v.clear();
        }
    }
}

Model model_from_checkpoint(const Checkpoint& ck) {
    Model model(ck.config.model, ck.config.train.seed);
    apply_checkpoint(ck, model, nullptr);
    return model;
}

void write_pgm(const std::string& path, const Tensor& map, const std::string& comment) {
    if (!map.defined() || map.rank() != 2) fail("pgm: expected a [H,W] map");
    const int h = map.dim(0), w = map.dim(1);
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("cannot write '" + path + "'");
    os << "P5\n";
    if (!comment.empty()) os << "# " << comment << "\n";
    os << w << " " << h << "\n255\n";
    const double* p = map.data();
    std::vector<unsigned char> row(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double v = std::clamp(p[static_cast<std::int64_t>(y) * w + x], 0.0, 1.0);
            row[static_cast<std::size_t>(x)] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        os.write(reinterpret_cast<const char*>(row.data()), w);
    }
    if (!os) fail("write to '" + path + "' failed");
}

namespace {

// minimal 24-bit bottom-up BMP of a grayscale map, base64-encoded
std::string bmp_base64(const Tensor& image) {
    Tensor img = image;
    if (img.rank() == 3 && img.dim(0) == 1) img = reshape(img, {image.dim(1), image.dim(2)});
    if (img.rank() != 2) fail("svg: expected a [H,W] or [1,H,W] image");
    const int h = img.dim(0), w = img.dim(1);
    const int stride = (3 * w + 3) & ~3;
    const std::uint32_t data_size = static_cast<std::uint32_t>(stride) * h;
    const std::uint32_t file_size = 54 + data_size;

    std::vector<unsigned char> bmp;
    bmp.reserve(file_size);
    auto u16 = [&](std::uint16_t v) {
        bmp.push_back(static_cast<unsigned char>(v));
        bmp.push_back(static_cast<unsigned char>(v >> 8));
    };
    auto u32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bmp.push_back(static_cast<unsigned char>(v >> (8 * i)));
    };
    bmp.push_back('B');
    bmp.push_back('M');
    u32(file_size);
    u32(0);
    u32(54);  // pixel data offset
    u32(40);  // BITMAPINFOHEADER
    u32(static_cast<std::uint32_t>(w));
    u32(static_cast<std::uint32_t>(h));
    u16(1);
    u16(24);
    u32(0);  // BI_RGB
    u32(data_size);
    u32(2835);  // 72 dpi
    u32(2835);
    u32(0);
    u32(0);
    const double* p = img.data();
    for (int y = h - 1; y >= 0; --y) {
        for (int x = 0; x < w; ++x) {
            double v = std::clamp(p[static_cast<std::int64_t>(y) * w + x], 0.0, 1.0);
            auto g = static_cast<unsigned char>(std::lround(v * 255.0));
            bmp.push_back(g);
            bmp.push_back(g);
            bmp.push_back(g);
        }
        for (int pad = 3 * w; pad < stride; ++pad) bmp.push_back(0);
    }

    static const char* alphabet =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bmp.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bmp.size(); i += 3) {
        std::uint32_t chunk = static_cast<std::uint32_t>(bmp[i]) << 16;
        if (i + 1 < bmp.size()) chunk |= static_cast<std::uint32_t>(bmp[i + 1]) << 8;
        if (i + 2 < bmp.size()) chunk |= bmp[i + 2];
        out.push_back(alphabet[(chunk >> 18) & 63]);
        out.push_back(alphabet[(chunk >> 12) & 63]);
        out.push_back(i + 1 < bmp.size() ? alphabet[(chunk >> 6) & 63] : '=');
        out.push_back(i + 2 < bmp.size() ? alphabet[chunk & 63] : '=');
    }
    return out;
}

}  // namespace

void write_scene_svg(const std::string& path, const Tensor& image,
                     const std::vector<LineSegment>& gts,
                     const std::vector<ScoredSegment>& dets, const std::string& comment) {
    std::ofstream os(path);
    if (!os) fail("cannot write '" + path + "'");
    if (!comment.empty()) os << "<!-- " << comment << " -->\n";

    double s_lo = 0.0, s_hi = 1.0;
    if (!dets.empty()) {
        s_lo = s_hi = dets.front().s;
        for (const auto& d : dets) {
            s_lo = std::min(s_lo, d.s);
            s_hi = std::max(s_hi, d.s);
        }
    }
    auto opacity = [&](double s) {
        if (s_hi <= s_lo) return 1.0;
        return 0.25 + 0.75 * (s - s_lo) / (s_hi - s_lo);
    };
    char buf[256];

    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"512\" height=\"512\" "
          "viewBox=\"0 0 1 1\">\n";
    os << "  <image href=\"data:image/bmp;base64," << bmp_base64(image)
       << "\" x=\"0\" y=\"0\" width=\"1\" height=\"1\" preserveAspectRatio=\"none\" "
          "image-rendering=\"pixelated\"/>\n";
    os << "  <g stroke=\"#21a35a\" stroke-width=\"0.008\" stroke-linecap=\"round\" "
          "fill=\"none\" stroke-opacity=\"0.9\">\n";
    for (const auto& g : gts) {
        std::snprintf(buf, sizeof buf,
                      "    <line x1=\"%.6f\" y1=\"%.6f\" x2=\"%.6f\" y2=\"%.6f\"/>\n", g.e1.x,
                      g.e1.y, g.e2.x, g.e2.y);
        os << buf;
    }
    os << "  </g>\n";
    os << "  <g stroke=\"#e03131\" stroke-width=\"0.004\" stroke-linecap=\"round\" "
          "fill=\"none\">\n";
    for (const auto& d : dets) {
        std::snprintf(buf, sizeof buf,
                      "    <line x1=\"%.6f\" y1=\"%.6f\" x2=\"%.6f\" y2=\"%.6f\" "
                      "stroke-opacity=\"%.3f\"/>\n",
                      d.seg.e1.x, d.seg.e1.y, d.seg.e2.x, d.seg.e2.y, opacity(d.s));
        os << buf;
    }
    os << "  </g>\n</svg>\n";
    if (!os) fail("write to '" + path + "' failed");
}

}  // namespace ranklsd
