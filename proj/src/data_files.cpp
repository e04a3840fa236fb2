#include "slicelab/data_files.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "slicelab/errors.hpp"

namespace slicelab {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return {};
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& tok, const std::string& where) {
    std::uint64_t value = 0;
    const char* begin = tok.c_str();
    const char* end = begin + tok.size();
    int base = 10;
    if (tok.size() > 2 && tok[0] == '0' && (tok[1] == 'x' || tok[1] == 'X')) {
        begin += 2;
        base = 16;
    }
    auto [ptr, ec] = std::from_chars(begin, end, value, base);
    if (ec != std::errc{} || ptr != end)
        raise(Errc::data_format_error, where + ": bad number '" + tok + "'");
    return value;
}

int hex_digit(char c) {
    if (c >= '0' && c <= '9')
        return c - '0';
    if (c >= 'a' && c <= 'f')
        return c - 'a' + 10;
    if (c >= 'A' && c <= 'F')
        return c - 'A' + 10;
    return -1;
}

struct LineReader {
    std::ifstream in;
    std::string path;
    int lineno = 0;

    explicit LineReader(const std::filesystem::path& p) : in(p), path(p.string()) {
        if (!in)
            raise(Errc::data_format_error, "cannot open " + path);
    }

    bool next(std::string& key, std::string& rest) {
        std::string line;
        while (std::getline(in, line)) {
            ++lineno;
            line = trim(line);
            if (line.empty() || line[0] == '#')
                continue;
            std::size_t sp = line.find_first_of(" \t");
            if (sp == std::string::npos) {
                key = line;
                rest.clear();
            } else {
                key = line.substr(0, sp);
                rest = trim(line.substr(sp + 1));
            }
            return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& msg) {
        raise(Errc::data_format_error, path + ":" + std::to_string(lineno) + ": " + msg);
    }
};

} // namespace

std::filesystem::path default_data_dir() {
    if (const char* env = std::getenv("SLICELAB_DATA"))
        return env;
#ifdef SLICELAB_DATA_DIR
    return SLICELAB_DATA_DIR;
#else
    return "data";
#endif
}

std::vector<SliceFunctionSpec> load_slice_functions(const std::filesystem::path& file) {
    LineReader reader(file);
    std::vector<SliceFunctionSpec> out;

    std::string key, rest;
    while (reader.next(key, rest)) {
        if (key != "function")
            reader.fail("expected 'function', got '" + key + "'");
        std::string name = rest;
        std::string kind;
        std::uint32_t slices = 0;
        std::uint32_t phys_bits = 0;
        std::vector<std::uint64_t> masks;
        std::string base_digits;
        bool done = false;
        while (!done && reader.next(key, rest)) {
            if (key == "kind") {
                kind = rest;
            } else if (key == "slices") {
                slices = static_cast<std::uint32_t>(parse_u64(rest, name));
            } else if (key == "phys_bits") {
                phys_bits = static_cast<std::uint32_t>(parse_u64(rest, name));
            } else if (key == "mask") {
                masks.push_back(parse_u64(rest, name));
            } else if (key == "base") {
                for (char c : rest) {
                    if (std::isspace(static_cast<unsigned char>(c)))
                        continue;
                    if (hex_digit(c) < 0)
                        reader.fail(name + ": bad base sequence digit");
                    base_digits.push_back(c);
                }
            } else if (key == "end") {
                done = true;
            } else {
                reader.fail("unknown key '" + key + "'");
            }
        }
        if (!done)
            reader.fail(name + ": missing 'end'");
        if (kind != "linear" && kind != "nonlinear")
            reader.fail(name + ": kind must be linear or nonlinear");

        if (kind == "linear") {
            if (!base_digits.empty())
                reader.fail(name + ": linear record with base sequence");
            out.push_back(SliceFunctionSpec::linear(name, masks, phys_bits));
        } else {
            std::vector<SliceIndex> base;
            base.reserve(base_digits.size());
            for (char c : base_digits)
                base.push_back(static_cast<SliceIndex>(hex_digit(c)));
            // Fold the implicit cache-line index term back in; the printed
            // masks must leave that bit free.
            for (std::size_t j = 0; j < masks.size(); ++j) {
                const std::uint64_t identity = 1ull << (kLineBits + j);
                if (masks[j] & identity)
                    reader.fail(name + ": table mask already uses its index bit");
                masks[j] |= identity;
            }
            out.push_back(SliceFunctionSpec::nonlinear(name, masks, base, slices, phys_bits));
        }
        if (out.back().slice_count != slices)
            reader.fail(name + ": slice count mismatch");
    }
    return out;
}

std::vector<CacheConfig> load_cache_configs(const std::filesystem::path& file,
                                            const std::vector<SliceFunctionSpec>& functions) {
    LineReader reader(file);
    std::vector<CacheConfig> out;

    std::string key, rest;
    while (reader.next(key, rest)) {
        if (key != "cpu")
            reader.fail("expected 'cpu', got '" + key + "'");
        CacheConfig cfg;
        cfg.name = rest;
        std::string function_name;
        bool done = false;
        while (!done && reader.next(key, rest)) {
            if (key == "function")
                function_name = rest;
            else if (key == "l1_sets")
                cfg.l1_sets = static_cast<std::uint32_t>(parse_u64(rest, cfg.name));
            else if (key == "l1_ways")
                cfg.l1_ways = static_cast<std::uint32_t>(parse_u64(rest, cfg.name));
            else if (key == "l2_sets")
                cfg.l2_sets = static_cast<std::uint32_t>(parse_u64(rest, cfg.name));
            else if (key == "l2_ways")
                cfg.l2_ways = static_cast<std::uint32_t>(parse_u64(rest, cfg.name));
            else if (key == "llc_sets")
                cfg.llc_sets_per_slice = static_cast<std::uint32_t>(parse_u64(rest, cfg.name));
            else if (key == "llc_ways")
                cfg.llc_ways = static_cast<std::uint32_t>(parse_u64(rest, cfg.name));
            else if (key == "subslices")
                cfg.subslices_per_slice = static_cast<std::uint32_t>(parse_u64(rest, cfg.name));
            else if (key == "inclusive")
                cfg.inclusive = parse_u64(rest, cfg.name) != 0;
            else if (key == "subslice_mask")
                cfg.subslice_mask = parse_u64(rest, cfg.name);
            else if (key == "end")
                done = true;
            else
                reader.fail("unknown key '" + key + "'");
        }
        if (!done)
            reader.fail(cfg.name + ": missing 'end'");
        cfg.slice_spec = find_function(functions, function_name);
        cfg.validate();
        out.push_back(std::move(cfg));
    }
    return out;
}

const SliceFunctionSpec& find_function(const std::vector<SliceFunctionSpec>& functions,
                                       const std::string& name) {
    for (const auto& f : functions)
        if (f.name == name)
            return f;
    raise(Errc::config_error, "unknown slice function '" + name + "'");
}

const CacheConfig& find_config(const std::vector<CacheConfig>& configs, const std::string& name) {
    for (const auto& c : configs)
        if (c.name == name)
            return c;
    raise(Errc::config_error, "unknown processor preset '" + name + "'");
}

std::vector<std::uint64_t> table_masks(const SliceFunctionSpec& spec) {
    std::vector<std::uint64_t> masks = spec.masks;
    if (!spec.is_linear())
        for (std::size_t j = 0; j < masks.size(); ++j)
            masks[j] &= ~(1ull << (kLineBits + j));
    return masks;
}

std::string format_mask_hex(std::uint64_t mask, std::uint32_t phys_bits) {
    const int digits = static_cast<int>((phys_bits + 3) / 4);
    char buf[32];
    std::snprintf(buf, sizeof buf, "0x%0*llx", digits, static_cast<unsigned long long>(mask));
    return buf;
}

std::string format_base_sequence(const SliceFunctionSpec& spec) {
    std::ostringstream os;
    for (std::size_t i = 0; i < spec.base_sequence.size(); ++i) {
        if (i != 0) {
            if (i % 32 == 0)
                os << '\n';
            else if (i % 4 == 0)
                os << ' ';
        }
        os << "0123456789abcdef"[spec.base_sequence[i] & 0xf];
    }
    return os.str();
}

BundledData load_bundled_data(const std::filesystem::path& dir) {
    BundledData data;
    data.functions = load_slice_functions(dir / "slice_functions.txt");
    data.configs = load_cache_configs(dir / "cache_configs.txt", data.functions);
    return data;
}

} // namespace slicelab
