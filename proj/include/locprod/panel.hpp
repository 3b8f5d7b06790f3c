#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "locprod/csv.hpp"
#include "locprod/error.hpp"

namespace locprod {

// One firm-year record. All production variables are in logs; `v` is the
// log nominal share of material costs in revenue; `price_ratio` is
// ln(P^M_t / P^Y_t) for the observation's own period.
struct PanelObservation {
    std::string firm_id;
    int firm_index = -1;
    int period = 0;
    double y = 0.0;
    double k = 0.0;
    double l = 0.0;
    double m = 0.0;
    std::vector<double> controls;  // productivity controls G, may be empty
    int location_index = -1;       // into PanelDataset::locations
    double v = 0.0;
    double price_ratio = 0.0;
};

// current = observation at t, lagged = same firm at t-1
struct LaggedRow {
    int current = -1;
    int lagged = -1;
};

struct PanelDataset {
    std::vector<PanelObservation> observations;
    std::vector<std::vector<double>> locations;        // unique coordinates, first-appearance order
    std::vector<std::vector<int>> location_observations;  // partition of observation indices
    std::map<int, double> price_series;                // period -> ln(P^M/P^Y)
    bool has_labor = true;
    int control_dim = 0;
    int n_firms = 0;
    int coord_dim = 0;

    std::size_t n_observations() const { return observations.size(); }
    std::size_t n_locations() const { return locations.size(); }

    const std::vector<double>& location_of(const PanelObservation& o) const {
        return locations[static_cast<std::size_t>(o.location_index)];
    }
};

// v = ln(P^M_t/P^Y_t) + m - y
inline double derive_share(double price_ratio, double m, double y) {
    return price_ratio + m - y;
}

// One row per observation whose firm is also observed at period-1.
// Unbalanced panels are fine: gaps simply produce no row.
inline std::vector<LaggedRow> build_lagged_rows(const PanelDataset& panel) {
    std::unordered_map<long long, int> by_firm_period;
    by_firm_period.reserve(panel.observations.size() * 2);
    auto key = [](int firm, int period) {
        return (static_cast<long long>(firm) << 32) ^ (static_cast<long long>(period) & 0xffffffffll);
    };
    for (std::size_t i = 0; i < panel.observations.size(); ++i) {
        const auto& o = panel.observations[i];
        by_firm_period.emplace(key(o.firm_index, o.period), static_cast<int>(i));
    }
    std::vector<LaggedRow> rows;
    rows.reserve(panel.observations.size());
    for (std::size_t i = 0; i < panel.observations.size(); ++i) {
        const auto& o = panel.observations[i];
        auto it = by_firm_period.find(key(o.firm_index, o.period - 1));
        if (it != by_firm_period.end())
            rows.push_back(LaggedRow{static_cast<int>(i), it->second});
    }
    return rows;
}

// Column-name map from canonical fields to source columns.
struct PanelSchema {
    std::string firm_id = "firm_id";
    std::string period = "period";
    std::string output = "y";
    std::string capital = "k";
    std::optional<std::string> labor = "l";  // nullopt declares a labor-free panel
    std::string materials = "m";
    std::vector<std::string> coordinates = {"s1", "s2"};
    std::vector<std::string> controls;
    std::optional<std::string> materials_cost;  // nominal, levels
    std::optional<std::string> revenue;         // nominal, levels
    std::optional<std::string> price_ratio;     // ln(P^M_t/P^Y_t), constant within period
    std::optional<std::string> v;               // take v directly from this column
    bool log_transform = true;
    char delimiter = ',';
};

namespace detail {

inline int find_column(const std::vector<std::string>& header, const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
        throw ConfigError("missing required column '" + name + "' in input header");
    return static_cast<int>(it - header.begin());
}

inline double log_level(double value, bool log_transform, const std::string& firm,
                        int period, const std::string& column) {
    if (!std::isfinite(value)) {
        std::ostringstream os;
        os << "non-finite value in column '" << column << "' for firm '" << firm
           << "', period " << period;
        throw DataDomainError(os.str());
    }
    if (!log_transform) return value;
    if (value <= 0.0) {
        std::ostringstream os;
        os << "nonpositive level (" << value << ") cannot be logged: firm '" << firm
           << "', period " << period << ", column '" << column << "'";
        throw DataDomainError(os.str());
    }
    return std::log(value);
}

}  // namespace detail

inline PanelDataset load_panel(std::istream& in, const PanelSchema& schema) {
    if (schema.materials_cost.has_value() != schema.revenue.has_value())
        throw ConfigError("materials_cost and revenue columns must be supplied together");

    CsvReader reader(in, schema.delimiter);
    const auto& header = reader.header();

    const int c_firm = detail::find_column(header, schema.firm_id);
    const int c_period = detail::find_column(header, schema.period);
    const int c_y = detail::find_column(header, schema.output);
    const int c_k = detail::find_column(header, schema.capital);
    const int c_l = schema.labor ? detail::find_column(header, *schema.labor) : -1;
    const int c_m = detail::find_column(header, schema.materials);
    if (schema.coordinates.empty())
        throw ConfigError("schema must name at least one coordinate column");
    std::vector<int> c_coords;
    for (const auto& name : schema.coordinates) c_coords.push_back(detail::find_column(header, name));
    std::vector<int> c_controls;
    for (const auto& name : schema.controls) c_controls.push_back(detail::find_column(header, name));
    const int c_cost = schema.materials_cost ? detail::find_column(header, *schema.materials_cost) : -1;
    const int c_rev = schema.revenue ? detail::find_column(header, *schema.revenue) : -1;
    const int c_pr = schema.price_ratio ? detail::find_column(header, *schema.price_ratio) : -1;
    const int c_v = schema.v ? detail::find_column(header, *schema.v) : -1;

    PanelDataset panel;
    panel.has_labor = schema.labor.has_value();
    panel.control_dim = static_cast<int>(schema.controls.size());
    panel.coord_dim = static_cast<int>(schema.coordinates.size());

    std::unordered_map<std::string, int> firm_index;
    std::vector<std::vector<double>> firm_coords;
    std::map<long long, long> seen_firm_period;  // (firm,period) -> input row
    std::map<std::vector<double>, int> location_index;

    std::vector<std::string> f;
    while (reader.next(f)) {
        PanelObservation o;
        o.firm_id = f[static_cast<std::size_t>(c_firm)];
        o.period = static_cast<int>(reader.parse_long(f[static_cast<std::size_t>(c_period)], schema.period));

        auto [fit, inserted] = firm_index.emplace(o.firm_id, static_cast<int>(firm_index.size()));
        o.firm_index = fit->second;

        const long long fp_key = (static_cast<long long>(o.firm_index) << 32) ^
                                 (static_cast<long long>(o.period) & 0xffffffffll);
        auto [sit, fresh] = seen_firm_period.emplace(fp_key, reader.row());
        if (!fresh) {
            std::ostringstream os;
            os << "duplicate (firm, period) = ('" << o.firm_id << "', " << o.period
               << ") at rows " << sit->second << " and " << reader.row();
            throw IntegrityError(os.str());
        }

        o.y = detail::log_level(reader.parse_double(f[static_cast<std::size_t>(c_y)], schema.output),
                                schema.log_transform, o.firm_id, o.period, schema.output);
        o.k = detail::log_level(reader.parse_double(f[static_cast<std::size_t>(c_k)], schema.capital),
                                schema.log_transform, o.firm_id, o.period, schema.capital);
        if (c_l >= 0)
            o.l = detail::log_level(reader.parse_double(f[static_cast<std::size_t>(c_l)], *schema.labor),
                                    schema.log_transform, o.firm_id, o.period, *schema.labor);
        o.m = detail::log_level(reader.parse_double(f[static_cast<std::size_t>(c_m)], schema.materials),
                                schema.log_transform, o.firm_id, o.period, schema.materials);

        std::vector<double> coords;
        for (std::size_t d = 0; d < c_coords.size(); ++d)
            coords.push_back(reader.parse_double(f[static_cast<std::size_t>(c_coords[d])],
                                                 schema.coordinates[d]));
        if (inserted) {
            firm_coords.push_back(coords);
        } else if (firm_coords[static_cast<std::size_t>(o.firm_index)] != coords) {
            std::ostringstream os;
            os << "firm '" << o.firm_id << "' has time-varying coordinates (row " << reader.row() << ")";
            throw IntegrityError(os.str());
        }
        auto [lit, fresh_loc] = location_index.emplace(coords, static_cast<int>(panel.locations.size()));
        if (fresh_loc) {
            panel.locations.push_back(coords);
            panel.location_observations.emplace_back();
        }
        o.location_index = lit->second;

        for (std::size_t g = 0; g < c_controls.size(); ++g)
            o.controls.push_back(reader.parse_double(f[static_cast<std::size_t>(c_controls[g])],
                                                     schema.controls[g]));

        if (c_pr >= 0) {
            const double pr = reader.parse_double(f[static_cast<std::size_t>(c_pr)], *schema.price_ratio);
            auto [pit, fresh_pr] = panel.price_series.emplace(o.period, pr);
            if (!fresh_pr && pit->second != pr) {
                std::ostringstream os;
                os << "price_ratio varies within period " << o.period << " (row " << reader.row() << ")";
                throw IntegrityError(os.str());
            }
            o.price_ratio = pr;
        }

        if (c_v >= 0) {
            o.v = reader.parse_double(f[static_cast<std::size_t>(c_v)], *schema.v);
        } else if (c_cost >= 0) {
            const double cost = detail::log_level(
                reader.parse_double(f[static_cast<std::size_t>(c_cost)], *schema.materials_cost), true,
                o.firm_id, o.period, *schema.materials_cost);
            const double rev = detail::log_level(
                reader.parse_double(f[static_cast<std::size_t>(c_rev)], *schema.revenue), true,
                o.firm_id, o.period, *schema.revenue);
            o.v = cost - rev;
        }
        // else: derived below once the full price series is known

        panel.location_observations[static_cast<std::size_t>(o.location_index)]
            .push_back(static_cast<int>(panel.observations.size()));
        panel.observations.push_back(std::move(o));
    }

    panel.n_firms = static_cast<int>(firm_index.size());

    // deflated-data convention: absent price information means ln(P^M/P^Y) = 0
    for (auto& o : panel.observations) {
        auto it = panel.price_series.find(o.period);
        if (it == panel.price_series.end()) {
            panel.price_series.emplace(o.period, 0.0);
            o.price_ratio = 0.0;
        } else {
            o.price_ratio = it->second;
        }
    }
    if (c_v < 0 && c_cost < 0)
        for (auto& o : panel.observations) o.v = derive_share(o.price_ratio, o.m, o.y);

    return panel;
}

inline PanelDataset load_panel_file(const std::string& path, const PanelSchema& schema) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open input file: " + path);
    return load_panel(in, schema);
}

// Canonical column layout: already-logged values, v and price_ratio included,
// coordinates as s1..sd, controls as g1..gq.
inline std::vector<std::string> canonical_columns(const PanelDataset& panel) {
    std::vector<std::string> cols = {"firm_id", "period", "y", "k"};
    if (panel.has_labor) cols.push_back("l");
    cols.push_back("m");
    cols.push_back("v");
    cols.push_back("price_ratio");
    for (int d = 0; d < panel.coord_dim; ++d) cols.push_back("s" + std::to_string(d + 1));
    for (int g = 0; g < panel.control_dim; ++g) cols.push_back("g" + std::to_string(g + 1));
    return cols;
}

inline void save_panel_csv(const PanelDataset& panel, std::ostream& out) {
    CsvWriter w(out);
    w.row(canonical_columns(panel));
    std::vector<std::string> f;
    for (const auto& o : panel.observations) {
        f.clear();
        f.push_back(o.firm_id);
        f.push_back(std::to_string(o.period));
        f.push_back(format_double(o.y));
        f.push_back(format_double(o.k));
        if (panel.has_labor) f.push_back(format_double(o.l));
        f.push_back(format_double(o.m));
        f.push_back(format_double(o.v));
        f.push_back(format_double(o.price_ratio));
        for (double c : panel.location_of(o)) f.push_back(format_double(c));
        for (double g : o.controls) f.push_back(format_double(g));
        w.row(f);
    }
}

// Programmatic construction with the same integrity checks as load_panel.
class PanelDatasetBuilder {
public:
    PanelDatasetBuilder(int coord_dim, bool has_labor, int control_dim)
        : coord_dim_(coord_dim), has_labor_(has_labor), control_dim_(control_dim) {
        panel_.coord_dim = coord_dim;
        panel_.has_labor = has_labor;
        panel_.control_dim = control_dim;
    }

    void set_price_ratio(int period, double log_ratio) { panel_.price_series[period] = log_ratio; }

    // logged inputs; v derived from the price series unless supplied
    void add(const std::string& firm_id, int period, double y, double k, double l, double m,
             const std::vector<double>& coords, const std::vector<double>& controls = {},
             std::optional<double> v = std::nullopt) {
        if (static_cast<int>(coords.size()) != coord_dim_)
            throw IntegrityError("builder: coordinate dimension mismatch for firm '" + firm_id + "'");
        if (static_cast<int>(controls.size()) != control_dim_)
            throw IntegrityError("builder: control dimension mismatch for firm '" + firm_id + "'");
        PanelObservation o;
        o.firm_id = firm_id;
        auto [fit, inserted] = firm_index_.emplace(firm_id, static_cast<int>(firm_index_.size()));
        o.firm_index = fit->second;
        o.period = period;
        const long long key = (static_cast<long long>(o.firm_index) << 32) ^
                              (static_cast<long long>(period) & 0xffffffffll);
        if (!seen_.insert(key).second) {
            std::ostringstream os;
            os << "builder: duplicate (firm, period) = ('" << firm_id << "', " << period << ")";
            throw IntegrityError(os.str());
        }
        if (inserted) {
            firm_coords_.push_back(coords);
        } else if (firm_coords_[static_cast<std::size_t>(o.firm_index)] != coords) {
            throw IntegrityError("builder: firm '" + firm_id + "' has time-varying coordinates");
        }
        o.y = y;
        o.k = k;
        o.l = l;
        o.m = m;
        o.controls = controls;
        auto [lit, fresh] = location_index_.emplace(coords, static_cast<int>(panel_.locations.size()));
        if (fresh) {
            panel_.locations.push_back(coords);
            panel_.location_observations.emplace_back();
        }
        o.location_index = lit->second;
        if (v) o.v = *v;
        pending_v_.push_back(v.has_value());
        panel_.location_observations[static_cast<std::size_t>(o.location_index)]
            .push_back(static_cast<int>(panel_.observations.size()));
        panel_.observations.push_back(std::move(o));
    }

    PanelDataset finish() {
        panel_.n_firms = static_cast<int>(firm_index_.size());
        for (std::size_t i = 0; i < panel_.observations.size(); ++i) {
            auto& o = panel_.observations[i];
            auto it = panel_.price_series.find(o.period);
            o.price_ratio = it == panel_.price_series.end() ? 0.0 : it->second;
            if (it == panel_.price_series.end()) panel_.price_series.emplace(o.period, 0.0);
            if (!pending_v_[i]) o.v = derive_share(o.price_ratio, o.m, o.y);
        }
        return std::move(panel_);
    }

private:
    int coord_dim_;
    bool has_labor_;
    int control_dim_;
    PanelDataset panel_;
    std::unordered_map<std::string, int> firm_index_;
    std::vector<std::vector<double>> firm_coords_;
    std::set<long long> seen_;
    std::map<std::vector<double>, int> location_index_;
    std::vector<char> pending_v_;
};

// Schema that reads back what save_panel_csv wrote, bit-identically.
inline PanelSchema canonical_schema(int coord_dim, bool has_labor, int control_dim) {
    PanelSchema s;
    s.firm_id = "firm_id";
    s.period = "period";
    s.output = "y";
    s.capital = "k";
    if (has_labor)
        s.labor = "l";
    else
        s.labor.reset();
    s.materials = "m";
    s.coordinates.clear();
    for (int d = 0; d < coord_dim; ++d) s.coordinates.push_back("s" + std::to_string(d + 1));
    s.controls.clear();
    for (int g = 0; g < control_dim; ++g) s.controls.push_back("g" + std::to_string(g + 1));
    s.price_ratio = "price_ratio";
    s.v = "v";
    s.log_transform = false;
    return s;
}

}
