#include "opelab/config.hpp"

#include "opelab/errors.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string_view>

namespace opelab {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view value) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = value.find(',', start);
        const auto item = trim(value.substr(start, comma == std::string_view::npos ? value.npos : comma - start));
        if (item.empty()) throw ArgumentError("empty list element");
        out.push_back(item);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

template <typename T>
T parse_number(std::string_view text) {
    T value{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ArgumentError("'" + std::string(text) + "' is not a valid number");
    }
    return value;
}

std::size_t parse_count(std::string_view text) { return parse_number<std::size_t>(text); }
double parse_real(std::string_view text) { return parse_number<double>(text); }

bool parse_flag(std::string_view text) {
    if (text == "true" || text == "yes" || text == "1") return true;
    if (text == "false" || text == "no" || text == "0") return false;
    throw ArgumentError("'" + std::string(text) + "' is not a boolean (true/false)");
}

std::vector<double> parse_reals(std::string_view text) {
    std::vector<double> out;
    for (auto item : split_list(text)) out.push_back(parse_real(item));
    return out;
}

using Setter = std::function<void(SweepSpec&, std::string_view)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
    static const std::vector<std::pair<std::string, Setter>> table = {
        {"experiment", [](SweepSpec& s, std::string_view v) { s.experiment = std::string(v); }},
        {"environment", [](SweepSpec& s, std::string_view v) { s.environment = parse_environment_kind(v); }},
        {"sweep_param", [](SweepSpec& s, std::string_view v) { s.param = parse_sweep_param(v); }},
        {"sweep_values", [](SweepSpec& s, std::string_view v) { s.grid = parse_reals(v); }},
        {"estimators",
         [](SweepSpec& s, std::string_view v) {
             s.estimators.clear();
             for (auto item : split_list(v)) s.estimators.push_back(parse_estimator_spec(item));
         }},
        {"n_seeds", [](SweepSpec& s, std::string_view v) { s.n_seeds = parse_count(v); }},
        {"n_validation_seeds", [](SweepSpec& s, std::string_view v) { s.n_validation_seeds = parse_count(v); }},
        {"n_logged",
         [](SweepSpec& s, std::string_view v) {
             s.n_logged = parse_count(v);
             s.synth.n_logged = s.n_logged;
         }},
        {"ridge_lambda", [](SweepSpec& s, std::string_view v) { s.ridge_lambda = parse_real(v); }},
        {"seed", [](SweepSpec& s, std::string_view v) { s.seed = parse_number<std::uint64_t>(v); }},
        {"tau_constraint",
         [](SweepSpec& s, std::string_view v) { s.convolution.constraint = parse_tau_constraint(v); }},
        {"tau_grid_tree",
         [](SweepSpec& s, std::string_view v) { s.convolution.tau_grids[ConvolutionKind::tree] = parse_reals(v); }},
        {"tau_grid_knn",
         [](SweepSpec& s, std::string_view v) { s.convolution.tau_grids[ConvolutionKind::knn] = parse_reals(v); }},
        {"tau_grid_ball",
         [](SweepSpec& s, std::string_view v) { s.convolution.tau_grids[ConvolutionKind::ball] = parse_reals(v); }},
        {"tau_grid_kernel",
         [](SweepSpec& s, std::string_view v) { s.convolution.tau_grids[ConvolutionKind::kernel] = parse_reals(v); }},
        {"tree_depth",
         [](SweepSpec& s, std::string_view v) { s.convolution.tree_depth = static_cast<int>(parse_count(v)); }},
        {"include_identity", [](SweepSpec& s, std::string_view v) { s.convolution.include_identity = parse_flag(v); }},
        {"renormalize_kernel",
         [](SweepSpec& s, std::string_view v) { s.convolution.renormalize_kernel = parse_flag(v); }},
        {"n_actions", [](SweepSpec& s, std::string_view v) { s.synth.n_actions = parse_count(v); }},
        {"n_topics", [](SweepSpec& s, std::string_view v) { s.synth.n_topics = parse_count(v); }},
        {"d_context", [](SweepSpec& s, std::string_view v) { s.synth.d_context = parse_count(v); }},
        {"d_embed", [](SweepSpec& s, std::string_view v) { s.synth.d_embed = parse_count(v); }},
        {"d_noise", [](SweepSpec& s, std::string_view v) { s.synth.d_noise = parse_count(v); }},
        {"hidden_width", [](SweepSpec& s, std::string_view v) { s.synth.hidden_width = parse_count(v); }},
        {"noise_draws", [](SweepSpec& s, std::string_view v) { s.synth.noise_draws = parse_count(v); }},
        {"n_test", [](SweepSpec& s, std::string_view v) { s.synth.n_test = parse_count(v); }},
        {"beta",
         [](SweepSpec& s, std::string_view v) {
             s.synth.beta = parse_real(v);
             s.movielens.beta = s.synth.beta;
         }},
        {"epsilon",
         [](SweepSpec& s, std::string_view v) {
             s.synth.epsilon = parse_real(v);
             s.movielens.target_epsilon = s.synth.epsilon;
         }},
        {"deficient_fraction", [](SweepSpec& s, std::string_view v) { s.deficient_fraction = parse_real(v); }},
        {"movielens_data", [](SweepSpec& s, std::string_view v) { s.movielens_data = std::string(v); }},
        {"rank", [](SweepSpec& s, std::string_view v) { s.movielens.rank = parse_count(v); }},
        {"eps_floor", [](SweepSpec& s, std::string_view v) { s.movielens.eps_floor = parse_real(v); }},
    };
    return table;
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        for (const auto& [key, setter] : setters()) out.push_back(key);
        return out;
    }();
    return keys;
}

SweepSpec parse_sweep_config(std::istream& in) {
    std::map<std::string_view, const Setter*> lookup;
    for (const auto& [key, setter] : setters()) lookup.emplace(key, &setter);

    SweepSpec spec;
    std::set<std::string> seen;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line(raw);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
        const std::string key(trim(line.substr(0, eq)));
        const std::string_view value = trim(line.substr(eq + 1));
        const auto it = lookup.find(key);
        if (it == lookup.end()) throw ParseError("unknown key '" + key + "'", line_no);
        if (!seen.insert(key).second) throw ParseError("key '" + key + "' given twice", line_no);
        if (value.empty()) throw ParseError("key '" + key + "' has no value", line_no);
        try {
            (*it->second)(spec, value);
        } catch (const ArgumentError& e) {
            throw ParseError(key + ": " + e.what(), line_no);
        }
    }
    if (in.bad()) throw IoError("read failure in configuration");
    return spec;
}

SweepSpec load_sweep_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open configuration " + path.string());
    return parse_sweep_config(in);
}

}  // namespace opelab
