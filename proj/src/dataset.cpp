#include "dapass/dataset.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dapass::data {

namespace fs = std::filesystem;

namespace {

std::atomic<int64_t> g_label_reads{0};

void write_file(const std::string& path, const std::string& bytes) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Reads "P6 W H 255" / "P5 W H 255" headers with whitespace separation.
struct PnmHeader {
    int64_t w = 0, h = 0;
    size_t data_off = 0;
};

PnmHeader parse_pnm_header(const std::string& bytes, const char* magic, const std::string& path) {
    if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1])
        throw IoError("bad magic in " + path);
    size_t pos = 2;
    auto next_int = [&]() -> int64_t {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            }
            ++pos;
        }
        int64_t v = 0;
        bool any = false;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + (bytes[pos] - '0');
            ++pos;
            any = true;
        }
        if (!any) throw IoError("truncated header in " + path);
        return v;
    };
    PnmHeader hd;
    hd.w = next_int();
    hd.h = next_int();
    const int64_t maxval = next_int();
    if (maxval != 255) throw IoError("unsupported maxval in " + path);
    hd.data_off = pos + 1;  // single whitespace after maxval
    return hd;
}

}  // namespace

void write_ppm(const std::string& path, const TensorF& image) {
    require(image.rank() == 3 && image.dim(0) == 3, "write_ppm expects a (3,H,W) image");
    const int64_t h = image.dim(1), w = image.dim(2), hw = h * w;
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + static_cast<size_t>(3 * hw));
    const auto& d = image.data();
    for (int64_t p = 0; p < hw; ++p)
        for (int c = 0; c < 3; ++c) {
            const double v = std::clamp(static_cast<double>(d[c * hw + p]), 0.0, 1.0);
            out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
    write_file(path, out);
}

TensorF read_ppm(const std::string& path) {
    const std::string bytes = read_file(path);
    const auto hd = parse_pnm_header(bytes, "P6", path);
    const int64_t hw = hd.h * hd.w;
    if (bytes.size() < hd.data_off + static_cast<size_t>(3 * hw))
        throw IoError("truncated pixel data in " + path);
    std::vector<float> d(static_cast<size_t>(3 * hw));
    for (int64_t p = 0; p < hw; ++p)
        for (int c = 0; c < 3; ++c) {
            const auto b = static_cast<unsigned char>(bytes[hd.data_off + 3 * p + c]);
            d[c * hw + p] = static_cast<float>(b) / 255.0f;
        }
    return TensorF::from_data({3, hd.h, hd.w}, std::move(d));
}

void write_pgm(const std::string& path, const LabelMap& label) {
    std::string out =
        "P5\n" + std::to_string(label.w) + " " + std::to_string(label.h) + "\n255\n";
    out.reserve(out.size() + label.v.size());
    for (int32_t v : label.v) {
        require(v >= 0 && v <= 255, "label value out of 8-bit range");
        out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    }
    write_file(path, out);
}

LabelMap read_pgm(const std::string& path) {
    g_label_reads.fetch_add(1, std::memory_order_relaxed);
    const std::string bytes = read_file(path);
    const auto hd = parse_pnm_header(bytes, "P5", path);
    if (bytes.size() < hd.data_off + static_cast<size_t>(hd.h * hd.w))
        throw IoError("truncated pixel data in " + path);
    LabelMap out(hd.h, hd.w);
    for (int64_t i = 0; i < hd.h * hd.w; ++i)
        out.v[i] = static_cast<unsigned char>(bytes[hd.data_off + i]);
    return out;
}

int64_t label_read_count() { return g_label_reads.load(std::memory_order_relaxed); }

namespace {
std::string split_dir(Domain d, SplitTag s) { return to_string(d) + "_" + to_string(s); }
}  // namespace

void write_dataset(const std::string& root, const std::vector<Sample>& samples) {
    fs::create_directories(root);
    std::ostringstream manifest;
    manifest << "id,image,label,domain,split\n";
    for (const auto& s : samples) {
        const std::string dir = split_dir(s.domain, s.split);
        const std::string img_rel = dir + "/" + s.id + ".ppm";
        const std::string lbl_rel = dir + "/" + s.id + ".pgm";
        write_ppm(root + "/" + img_rel, s.image);
        write_pgm(root + "/" + lbl_rel, s.label);
        manifest << s.id << "," << img_rel << "," << lbl_rel << "," << to_string(s.domain) << ","
                 << to_string(s.split) << "\n";
    }
    write_file(root + "/manifest.csv", manifest.str());
}

std::vector<ManifestEntry> read_manifest(const std::string& root) {
    std::ifstream f(root + "/manifest.csv");
    if (!f) throw IoError("missing manifest: " + root + "/manifest.csv");
    std::vector<ManifestEntry> out;
    std::string line;
    bool header = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        std::vector<std::string> parts;
        std::istringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) parts.push_back(tok);
        if (parts.size() != 5) throw IoError("malformed manifest line: " + line);
        ManifestEntry e;
        e.id = parts[0];
        e.image_rel = parts[1];
        e.label_rel = parts[2];
        e.domain = parts[3] == "source" ? Domain::Source : Domain::Target;
        e.split = parts[4] == "train" ? SplitTag::Train : SplitTag::Val;
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<ManifestEntry> filter(const std::vector<ManifestEntry>& all, Domain d, SplitTag s) {
    std::vector<ManifestEntry> out;
    for (const auto& e : all)
        if (e.domain == d && e.split == s) out.push_back(e);
    return out;
}

Sample load_sample(const std::string& root, const ManifestEntry& e) {
    Sample s;
    s.id = e.id;
    s.image = read_ppm(root + "/" + e.image_rel);
    s.label = read_pgm(root + "/" + e.label_rel);
    s.domain = e.domain;
    s.split = e.split;
    return s;
}

UnlabeledSample load_unlabeled(const std::string& root, const ManifestEntry& e) {
    return UnlabeledSample{e.id, read_ppm(root + "/" + e.image_rel)};
}

std::vector<Sample> load_samples(const std::string& root, Domain d, SplitTag s) {
    std::vector<Sample> out;
    for (const auto& e : filter(read_manifest(root), d, s)) out.push_back(load_sample(root, e));
    return out;
}

std::vector<UnlabeledSample> load_unlabeled_split(const std::string& root, Domain d, SplitTag s) {
    std::vector<UnlabeledSample> out;
    for (const auto& e : filter(read_manifest(root), d, s))
        out.push_back(load_unlabeled(root, e));
    return out;
}

}  // namespace dapass::data
