#pragma once

// File formats: word-vector text tables, synonym JSON, dataset manifests and
// 8-bit PNG images.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <png.h>

#include "cmi/canonical_json.hpp"
#include "cmi/errors.hpp"
#include "cmi/eval_retrieval.hpp"
#include "cmi/tensor.hpp"
#include "cmi/text.hpp"

namespace cmi {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << content;
    out.flush();
    if (!out) throw DataError("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Word-vector text format: "token v1 ... vD" per line, single spaces.

struct TableLoad {
    WordEmbeddingTable table;
    std::vector<std::string> warnings;
};

inline TableLoad parse_embedding_table(std::istream& in, const std::string& origin = "<stream>") {
    TableLoad out;
    std::string line;
    std::size_t line_no = 0;
    std::size_t dim = 0;
    std::vector<double> values;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto where = [&] { return origin + ":" + std::to_string(line_no) + ": "; };
        std::istringstream fields(line);
        std::string token;
        fields >> token;
        values.clear();
        for (std::string f; fields >> f;) {
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec != std::errc() || ptr != f.data() + f.size()) throw DataError(where() + "malformed number '" + f + "'");
            values.push_back(v);
        }
        if (values.empty()) throw DataError(where() + "token without a vector");
        if (dim == 0) dim = values.size();
        if (values.size() != dim) {
            throw DataError(where() + "dimension " + std::to_string(values.size()) + " differs from " +
                            std::to_string(dim) + " on the first line");
        }
        try {
            if (!out.table.add(token, values)) {
                out.warnings.push_back(where() + "duplicate token '" + token + "' ignored (first occurrence wins)");
            }
        } catch (const InvalidInputError& e) {
            throw DataError(where() + e.what());
        }
    }
    if (out.table.empty()) throw DataError(origin + ": embedding table is empty");
    return out;
}

inline TableLoad load_embedding_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read embedding table '" + path + "'");
    return parse_embedding_table(in, path);
}

// 17 significant digits, so save/load is bit-exact.
inline std::string format_embedding_table(const WordEmbeddingTable& table) {
    std::string out;
    char buf[40];
    for (std::size_t r = 0; r < table.size(); ++r) {
        out += table.tokens()[r];
        for (double v : table.vector(r)) {
            std::snprintf(buf, sizeof buf, " %.17g", v);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

inline void save_embedding_table(const WordEmbeddingTable& table, const std::string& path) {
    write_file(path, format_embedding_table(table));
}

// ---------------------------------------------------------------------------
// Synonym file: JSON object token -> list of tokens.

using SynonymMap = std::map<std::string, std::vector<std::string>>;

inline SynonymMap synonyms_from_json(const json& j) {
    if (!j.is_object()) throw DataError("synonym file must be a JSON object");
    SynonymMap out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it.value().is_array()) throw DataError("synonyms of '" + it.key() + "' must be a list");
        for (const auto& s : it.value()) {
            if (!s.is_string()) throw DataError("synonyms of '" + it.key() + "' must be strings");
            out[it.key()].push_back(s.get<std::string>());
        }
    }
    return out;
}

inline SynonymMap load_synonyms(const std::string& path) {
    try {
        return synonyms_from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw DataError("synonym file '" + path + "' is not valid JSON: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// PNG (8-bit), decoded to [0,1] as RGB or gray channels-first.

inline ImageTensor load_png(const std::string& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw DataError("cannot decode PNG '" + path + "': " + img.message);
    }
    const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
    img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    const std::size_t channels = gray ? 1 : 3;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw DataError("cannot decode PNG '" + path + "': " + msg);
    }
    const Shape3 shape{channels, img.height, img.width};
    Tensor3 t(shape);
    for (std::size_t y = 0; y < shape.height; ++y)
        for (std::size_t x = 0; x < shape.width; ++x)
            for (std::size_t c = 0; c < channels; ++c)
                t(c, y, x) = buf[(y * shape.width + x) * channels + c] / 255.0;
    return ImageTensor(std::move(t));
}

inline void save_png(const ImageTensor& image, const std::string& path) {
    const auto& s = image.shape();
    if (s.channels != 1 && s.channels != 3) throw InvalidInputError("PNG export needs 1 or 3 channels");
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(s.width);
    img.height = static_cast<png_uint_32>(s.height);
    img.format = s.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<png_byte> buf(s.size());
    for (std::size_t y = 0; y < s.height; ++y)
        for (std::size_t x = 0; x < s.width; ++x)
            for (std::size_t c = 0; c < s.channels; ++c)
                buf[(y * s.width + x) * s.channels + c] =
                    static_cast<png_byte>(std::lround(image.tensor()(c, y, x) * 255.0));
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
        throw DataError("cannot write PNG '" + path + "': " + img.message);
    }
}

// ---------------------------------------------------------------------------
// Dataset manifest

struct SyntheticImageSpec {
    std::uint64_t seed = 0;
    Shape3 shape;
};

struct InlineImage {
    Shape3 shape;
    std::vector<std::uint8_t> u8;
};

using ImageSource = std::variant<std::string, SyntheticImageSpec, InlineImage>;

struct ManifestEntry {
    std::string pair_id;
    ImageSource image;
    std::vector<std::string> captions;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
};

// Uniform pixels from mt19937_64; a pure function of the spec.
inline ImageTensor synthesize_image(const SyntheticImageSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    Tensor3 t(spec.shape);
    for (auto& v : t.values()) v = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return ImageTensor(std::move(t));
}

inline ImageTensor decode_inline(const InlineImage& img) {
    if (img.u8.size() != img.shape.size()) throw DataError("inline image pixel count does not match its shape");
    Tensor3 t(img.shape);
    for (std::size_t i = 0; i < img.u8.size(); ++i) t[i] = img.u8[i] / 255.0;
    return ImageTensor(std::move(t));
}

inline json shape_to_json(const Shape3& s) { return json::array({s.channels, s.height, s.width}); }

inline Shape3 shape_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw DataError("shape must be [channels, height, width]");
    for (const auto& v : j)
        if (!v.is_number_unsigned() || v.get<std::size_t>() == 0) throw DataError("shape extents must be positive integers");
    return Shape3{j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
}

inline json to_json(const DatasetManifest& m) {
    json entries = json::array();
    for (const auto& e : m.entries) {
        json image;
        if (const auto* p = std::get_if<std::string>(&e.image)) {
            image = *p;
        } else if (const auto* s = std::get_if<SyntheticImageSpec>(&e.image)) {
            image = json{{"synthetic", {{"seed", s->seed}, {"shape", shape_to_json(s->shape)}}}};
        } else {
            const auto& in = std::get<InlineImage>(e.image);
            image = json{{"shape", shape_to_json(in.shape)}, {"u8", in.u8}};
        }
        entries.push_back(json{{"pair_id", e.pair_id}, {"image", image}, {"captions", e.captions}});
    }
    return json{{"entries", entries}};
}

inline DatasetManifest manifest_from_json(const json& j) {
    if (!j.is_object() || !j.contains("entries") || !j["entries"].is_array()) {
        throw DataError("manifest must be an object with an 'entries' array");
    }
    DatasetManifest m;
    std::set<std::string> ids;
    for (const auto& e : j["entries"]) {
        if (!e.is_object() || !e.contains("pair_id") || !e["pair_id"].is_string()) {
            throw DataError("manifest entry without a string pair_id");
        }
        ManifestEntry entry;
        entry.pair_id = e["pair_id"].get<std::string>();
        if (!ids.insert(entry.pair_id).second) throw DataError("duplicate pair_id '" + entry.pair_id + "'");
        if (!e.contains("captions") || !e["captions"].is_array() || e["captions"].empty()) {
            throw DataError("pair '" + entry.pair_id + "' needs a non-empty captions list");
        }
        for (const auto& c : e["captions"]) {
            if (!c.is_string() || split_words(c.get<std::string>()).empty()) {
                throw DataError("pair '" + entry.pair_id + "' has an empty or non-string caption");
            }
            entry.captions.push_back(c.get<std::string>());
        }
        if (!e.contains("image")) throw DataError("pair '" + entry.pair_id + "' has no image");
        const json& im = e["image"];
        if (im.is_string()) {
            entry.image = im.get<std::string>();
        } else if (im.is_object() && im.contains("synthetic")) {
            const json& s = im["synthetic"];
            if (!s.contains("seed") || !s["seed"].is_number_unsigned()) {
                throw DataError("pair '" + entry.pair_id + "': synthetic image needs an unsigned seed");
            }
            entry.image = SyntheticImageSpec{s["seed"].get<std::uint64_t>(), shape_from_json(s.value("shape", json()))};
        } else if (im.is_object() && im.contains("u8")) {
            InlineImage in{shape_from_json(im.value("shape", json())), {}};
            for (const auto& v : im["u8"]) {
                if (!v.is_number_unsigned() || v.get<unsigned>() > 255) {
                    throw DataError("pair '" + entry.pair_id + "': inline pixels must be integers in [0,255]");
                }
                in.u8.push_back(static_cast<std::uint8_t>(v.get<unsigned>()));
            }
            if (in.u8.size() != in.shape.size()) throw DataError("pair '" + entry.pair_id + "': inline pixel count mismatch");
            entry.image = std::move(in);
        } else {
            throw DataError("pair '" + entry.pair_id + "': unrecognized image source");
        }
        m.entries.push_back(std::move(entry));
    }
    if (m.entries.empty()) throw DataError("manifest has no entries");
    return m;
}

// Relative PNG paths resolve against the manifest's directory; files must exist.
inline DatasetManifest load_manifest(const std::string& path) {
    DatasetManifest m;
    try {
        m = manifest_from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw DataError("manifest '" + path + "' is not valid JSON: " + e.what());
    }
    const auto base = std::filesystem::path(path).parent_path();
    for (auto& e : m.entries) {
        if (auto* p = std::get_if<std::string>(&e.image)) {
            std::filesystem::path file(*p);
            if (file.is_relative()) file = base / file;
            if (!std::filesystem::exists(file)) throw DataError("image file '" + file.string() + "' does not exist");
            *p = file.string();
        }
    }
    return m;
}

inline ImageTensor resolve_image(const ImageSource& src) {
    if (const auto* p = std::get_if<std::string>(&src)) return load_png(*p);
    if (const auto* s = std::get_if<SyntheticImageSpec>(&src)) return synthesize_image(*s);
    return decode_inline(std::get<InlineImage>(src));
}

inline RetrievalCorpus corpus_from_manifest(const DatasetManifest& m) {
    RetrievalCorpus corpus;
    for (const auto& e : m.entries) {
        CorpusItem item{e.pair_id, resolve_image(e.image), {}};
        for (const auto& c : e.captions) item.captions.push_back(Caption::from_text(c));
        corpus.items.push_back(std::move(item));
    }
    corpus.validate();
    return corpus;
}

} // namespace cmi
