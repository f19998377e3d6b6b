#include "biofact/cohort/io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>

#include "biofact/core/rng.hpp"
#include "biofact/core/text.hpp"

namespace biofact::cohort {

static_assert(std::endian::native == std::endian::little, "studies.bin I/O assumes a little-endian host");

using nlohmann::json;

json to_json(const CohortConfig& c)
{
    return json{{"n_patients", c.n_patients},
                {"train_fraction", c.train_fraction},
                {"beta_liver", c.beta_liver},
                {"beta_tumor", c.beta_tumor},
                {"dominance", c.dominance},
                {"baseline_hazard", c.baseline_hazard},
                {"censoring_rate", c.censoring_rate},
                {"treatment_fraction", c.treatment_fraction},
                {"treatment_effect_liver_lowrisk", c.treatment_effect_liver_lowrisk},
                {"noise_std", c.noise_std},
                {"report_noise_std", c.report_noise_std},
                {"background_std", c.background_std},
                {"cross_leak", c.cross_leak},
                {"liver_dim", c.liver_dim},
                {"tumor_dim", c.tumor_dim},
                {"neutral_dim", c.neutral_dim},
                {"slices", c.slices},
                {"patches_per_slice", c.patches_per_slice},
                {"token_dim", c.token_dim},
                {"seed", c.seed}};
}

CohortConfig cohort_config_from_json(const json& j)
{
    if (!j.is_object()) throw ConfigError("cohort config must be an object");
    CohortConfig c;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "n_patients") c.n_patients = value.get<int>();
            else if (key == "train_fraction") c.train_fraction = value.get<double>();
            else if (key == "beta_liver") c.beta_liver = value.get<double>();
            else if (key == "beta_tumor") c.beta_tumor = value.get<double>();
            else if (key == "dominance") c.dominance = value.get<double>();
            else if (key == "baseline_hazard") c.baseline_hazard = value.get<double>();
            else if (key == "censoring_rate") c.censoring_rate = value.get<double>();
            else if (key == "treatment_fraction") c.treatment_fraction = value.get<double>();
            else if (key == "treatment_effect_liver_lowrisk") c.treatment_effect_liver_lowrisk = value.get<double>();
            else if (key == "noise_std") c.noise_std = value.get<double>();
            else if (key == "report_noise_std") c.report_noise_std = value.get<double>();
            else if (key == "background_std") c.background_std = value.get<double>();
            else if (key == "cross_leak") c.cross_leak = value.get<double>();
            else if (key == "liver_dim") c.liver_dim = value.get<int>();
            else if (key == "tumor_dim") c.tumor_dim = value.get<int>();
            else if (key == "neutral_dim") c.neutral_dim = value.get<int>();
            else if (key == "slices") c.slices = value.get<int>();
            else if (key == "patches_per_slice") c.patches_per_slice = value.get<int>();
            else if (key == "token_dim") c.token_dim = value.get<int>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else throw ConfigError("cohort: unknown key '" + key + "'");
        } catch (const json::exception& e) {
            throw ConfigError("cohort." + key + ": " + e.what());
        }
    }
    return c;
}

std::string config_hash(const CohortConfig& cfg)
{
    return hex64(fnv1a(to_json(cfg).dump()));
}

namespace {

std::string split_tag(const Cohort& c, std::size_t i)
{
    return std::binary_search(c.train.begin(), c.train.end(), i) ? "train" : "test";
}

template <typename T>
void put(std::string& out, T v)
{
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    template <typename T>
    T get(const char* what)
    {
        if (pos_ + sizeof(T) > data_.size())
            throw ParseError("studies.bin: truncated while reading " + std::string(what) + " at byte offset " +
                             std::to_string(pos_));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string bytes(std::size_t n, const char* what)
    {
        if (pos_ + n > data_.size())
            throw ParseError("studies.bin: truncated while reading " + std::string(what) + " at byte offset " +
                             std::to_string(pos_));
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }

    std::size_t offset() const { return pos_; }
    bool done() const { return pos_ == data_.size(); }

private:
    std::string_view data_;
    std::size_t pos_ = 0;
};

struct CsvLine {
    std::size_t number; // 1-based line number in the file
    std::string text;
};

std::vector<CsvLine> csv_lines(const std::string& text)
{
    std::vector<CsvLine> lines;
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty() && line.front() == '#') continue;
        lines.push_back({number, line});
    }
    return lines;
}

std::string at_line(const std::string& file, std::size_t line_no)
{
    return file + " line " + std::to_string(line_no);
}

} // namespace

std::string write_cohort_csv(const Cohort& c)
{
    std::string out = "# config_hash=" + config_hash(c.config) + "\n";
    out += "patient_id,time_months,event,treated,palbi_class,bilobar,immunoscore_class\n";
    for (const Patient& p : c.patients) {
        const SurvivalRecord& r = p.record;
        out += p.latent.patient_id + "," + format_double(r.time_months) + "," + (r.event ? "1" : "0") + "," +
               (r.treated ? "1" : "0") + "," + std::to_string(r.palbi_class) + "," + (r.bilobar ? "1" : "0") + "," +
               std::to_string(r.immunoscore_class) + "\n";
    }
    return out;
}

std::string write_latent_csv(const Cohort& c)
{
    const auto& cfg = c.config;
    std::string out = "# config_hash=" + config_hash(cfg) + "\npatient_id,split";
    for (int k = 0; k < cfg.liver_dim; ++k) out += ",liver_" + std::to_string(k);
    for (int k = 0; k < cfg.tumor_dim; ++k) out += ",tumor_" + std::to_string(k);
    for (int k = 0; k < cfg.neutral_dim; ++k) out += ",neutral_" + std::to_string(k);
    out += "\n";
    for (std::size_t i = 0; i < c.patients.size(); ++i) {
        const LatentPatient& l = c.patients[i].latent;
        out += l.patient_id + "," + split_tag(c, i);
        for (double x : l.liver_factor) out += "," + format_double(x);
        for (double x : l.tumor_factor) out += "," + format_double(x);
        for (double x : l.neutral_context) out += "," + format_double(x);
        out += "\n";
    }
    return out;
}

std::string write_studies_bin(const Cohort& c)
{
    const auto& cfg = c.config;
    std::string out(kStudiesMagic, sizeof kStudiesMagic);
    put<std::uint32_t>(out, kStudiesVersion);
    const std::string hash = config_hash(cfg);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(hash.size()));
    out += hash;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(c.patients.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.slices));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.patches_per_slice));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.token_dim));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(kOrganCount));
    for (auto name : kOrganNames) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.append(name);
    }
    for (const Patient& p : c.patients) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.latent.patient_id.size()));
        out += p.latent.patient_id;
        for (const Matrix& m : p.study.patch_tokens) out.append(reinterpret_cast<const char*>(m.data()), m.size() * 8);
        for (const Matrix& m : p.study.occupancy) out.append(reinterpret_cast<const char*>(m.data()), m.size() * 8);
    }
    return out;
}

std::string write_reports_json(const Cohort& c)
{
    json patients = json::array();
    for (const Patient& p : c.patients)
        patients.push_back({{"patient_id", p.latent.patient_id},
                            {"liver", p.report.liver},
                            {"tumor", p.report.tumor},
                            {"neutral", p.report.neutral}});
    return json{{"config_hash", config_hash(c.config)}, {"vocab_size", c.vocab.size}, {"patients", patients}}.dump() +
           "\n";
}

json manifest_json(const Cohort& c)
{
    return json{{"format", "biofact-cohort"},
                {"version", 1},
                {"config", to_json(c.config)},
                {"config_hash", config_hash(c.config)},
                {"n_patients", c.patients.size()},
                {"n_train", c.train.size()},
                {"n_test", c.test.size()}};
}

void export_cohort(const Cohort& c, const std::string& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
    const std::filesystem::path root(dir);
    write_file((root / "cohort.csv").string(), write_cohort_csv(c));
    write_file((root / "latent.csv").string(), write_latent_csv(c));
    write_file((root / "studies.bin").string(), write_studies_bin(c));
    write_file((root / "reports.json").string(), write_reports_json(c));
    write_file((root / "manifest.json").string(), manifest_json(c).dump(2) + "\n");
}

Cohort import_cohort(const std::string& dir)
{
    const std::filesystem::path root(dir);
    Cohort c;

    json manifest;
    try {
        manifest = json::parse(read_file((root / "manifest.json").string()));
        c.config = cohort_config_from_json(manifest.at("config"));
    } catch (const json::exception& e) {
        throw ParseError(std::string("manifest.json: ") + e.what());
    }
    c.config.validate();
    const auto& cfg = c.config;
    const auto n = static_cast<std::size_t>(cfg.n_patients);
    c.patients.resize(n);
    std::map<std::string, std::size_t> index;

    // latent.csv defines ids, order and split.
    {
        const auto lines = csv_lines(read_file((root / "latent.csv").string()));
        const std::size_t cols = 2 + static_cast<std::size_t>(cfg.liver_dim + cfg.tumor_dim + cfg.neutral_dim);
        if (lines.size() != n + 1) throw ParseError("latent.csv: expected " + std::to_string(n) + " rows");
        for (std::size_t i = 0; i < n; ++i) {
            const auto ctx = at_line("latent.csv", lines[i + 1].number);
            const auto f = split(lines[i + 1].text, ',');
            if (f.size() != cols) throw ParseError(ctx + ": expected " + std::to_string(cols) + " fields");
            LatentPatient& l = c.patients[i].latent;
            l.patient_id = std::string(f[0]);
            if (f[1] == "train") c.train.push_back(i);
            else if (f[1] == "test") c.test.push_back(i);
            else throw ParseError(ctx + ": split must be train or test");
            std::size_t k = 2;
            l.liver_factor = Vector(cfg.liver_dim);
            l.tumor_factor = Vector(cfg.tumor_dim);
            l.neutral_context = Vector(cfg.neutral_dim);
            for (auto& x : l.liver_factor) x = parse_double(f[k++], ctx);
            for (auto& x : l.tumor_factor) x = parse_double(f[k++], ctx);
            for (auto& x : l.neutral_context) x = parse_double(f[k++], ctx);
            if (!index.emplace(l.patient_id, i).second) throw ParseError(ctx + ": duplicate patient id");
        }
    }

    auto lookup = [&](std::string_view id, const std::string& ctx) {
        auto it = index.find(std::string(id));
        if (it == index.end()) throw ParseError(ctx + ": unknown patient id '" + std::string(id) + "'");
        return it->second;
    };

    {
        const auto lines = csv_lines(read_file((root / "cohort.csv").string()));
        if (lines.size() != n + 1) throw ParseError("cohort.csv: expected " + std::to_string(n) + " rows");
        for (std::size_t i = 0; i < n; ++i) {
            const auto ctx = at_line("cohort.csv", lines[i + 1].number);
            const auto f = split(lines[i + 1].text, ',');
            if (f.size() != 7) throw ParseError(ctx + ": expected 7 fields");
            SurvivalRecord& r = c.patients[lookup(f[0], ctx)].record;
            auto flag = [&](std::string_view s) {
                if (s == "1") return true;
                if (s == "0") return false;
                throw ParseError(ctx + ": expected 0/1, got '" + std::string(s) + "'");
            };
            r.time_months = parse_double(f[1], ctx);
            if (!(r.time_months > 0.0)) throw ParseError(ctx + ": time_months must be > 0");
            r.event = flag(f[2]);
            r.treated = flag(f[3]);
            r.palbi_class = static_cast<int>(parse_int(f[4], ctx));
            r.bilobar = flag(f[5]);
            r.immunoscore_class = static_cast<int>(parse_int(f[6], ctx));
        }
    }

    {
        const std::string raw = read_file((root / "studies.bin").string());
        ByteReader in(raw);
        if (in.bytes(sizeof kStudiesMagic, "magic") != std::string(kStudiesMagic, sizeof kStudiesMagic))
            throw ParseError("studies.bin: bad magic at byte offset 0");
        const auto version = in.get<std::uint32_t>("version");
        if (version != kStudiesVersion)
            throw ParseError("studies.bin: unsupported version " + std::to_string(version));
        const auto hash_len = in.get<std::uint32_t>("config hash length");
        if (in.bytes(hash_len, "config hash") != config_hash(cfg))
            throw ParseError("studies.bin: config hash disagrees with manifest");
        const auto count = in.get<std::uint32_t>("patient count");
        const auto slices = in.get<std::uint32_t>("slices");
        const auto patches = in.get<std::uint32_t>("patches");
        const auto dtok = in.get<std::uint32_t>("token dim");
        const auto organs = in.get<std::uint32_t>("organ count");
        if (count != n || slices != static_cast<std::uint32_t>(cfg.slices) ||
            patches != static_cast<std::uint32_t>(cfg.patches_per_slice) ||
            dtok != static_cast<std::uint32_t>(cfg.token_dim) || organs != kOrganCount)
            throw ParseError("studies.bin: header dimensions disagree with manifest");
        for (auto name : kOrganNames) {
            const auto len = in.get<std::uint32_t>("organ name length");
            if (in.bytes(len, "organ name") != name)
                throw ParseError("studies.bin: organ ordering differs near byte offset " +
                                 std::to_string(in.offset()));
        }
        for (std::size_t i = 0; i < n; ++i) {
            const auto len = in.get<std::uint32_t>("patient id length");
            const auto id = in.bytes(len, "patient id");
            SyntheticStudy& s = c.patients[lookup(id, "studies.bin")].study;
            s.patch_tokens.assign(slices, Matrix(patches, dtok));
            s.occupancy.assign(slices, Matrix(patches, kOrganCount));
            for (auto& m : s.patch_tokens)
                for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = in.get<double>("patch token");
            for (auto& m : s.occupancy)
                for (Eigen::Index k = 0; k < m.size(); ++k) {
                    const double v = in.get<double>("occupancy");
                    if (!(v >= 0.0 && v <= 1.0))
                        throw ParseError("studies.bin: occupancy outside [0, 1] at byte offset " +
                                         std::to_string(in.offset() - 8));
                    m.data()[k] = v;
                }
        }
        if (!in.done()) throw ParseError("studies.bin: trailing bytes at offset " + std::to_string(in.offset()));
    }

    {
        json reports;
        try {
            reports = json::parse(read_file((root / "reports.json").string()));
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("reports.json: ") + e.what());
        }
        try {
            const auto& arr = reports.at("patients");
            if (arr.size() != n) throw ParseError("reports.json: expected " + std::to_string(n) + " patients");
            for (std::size_t i = 0; i < arr.size(); ++i) {
                const auto& e = arr[i];
                const auto ctx = "reports.json patient " + std::to_string(i);
                ReportSegments& r = c.patients[lookup(e.at("patient_id").get<std::string>(), ctx)].report;
                r.liver = e.at("liver").get<TokenSeq>();
                r.tumor = e.at("tumor").get<TokenSeq>();
                r.neutral = e.at("neutral").get<TokenSeq>();
                for (const TokenSeq* seq : {&r.liver, &r.tumor, &r.neutral}) {
                    if (seq->empty()) throw ParseError(ctx + ": empty segment");
                    for (int t : *seq)
                        if (t < 0 || t >= c.vocab.size) throw ParseError(ctx + ": token id out of vocabulary");
                }
            }
        } catch (const json::exception& e) {
            throw ParseError(std::string("reports.json: ") + e.what());
        }
    }
    return c;
}

} // namespace biofact::cohort
