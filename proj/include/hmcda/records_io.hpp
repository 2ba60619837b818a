#pragma once

// CSV and JSON export of experiment records, with readers that round-trip.

#include "hmcda/experiment.hpp"

#include <boost/tokenizer.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace hmcda {

class IoError : public Error {
 public:
  using Error::Error;
};

enum class RecordFormat { csv, json };

inline std::optional<RecordFormat> parse_record_format(std::string_view s) {
  if (s == "csv") return RecordFormat::csv;
  if (s == "json") return RecordFormat::json;
  return std::nullopt;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double read_double(const std::string& text, const std::string& context) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) {
    throw IoError(context + ": malformed number '" + text + "'");
  }
  return v;
}

inline std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + '"';
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

inline std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

inline void finish_write(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace detail

// -----------------------------------------------------------------------------
// CSV: one row per (instance, time); per-instance fields repeat on every row.

inline constexpr std::string_view kCsvHeader =
    "config_fingerprint,instance,time,rmse,acceptance_rate,diverged,proposals,acceptances,"
    "gradient_evaluations,nonconverged_cycles,divergence_time,divergence_message";

inline void write_csv(const RecordSet& records, std::ostream& out) {
  out << kCsvHeader << '\n';
  for (const auto& rec : records.instances) {
    const std::string tail = "," + std::string(rec.diverged ? "1" : "0") + "," +
                             std::to_string(rec.proposals) + "," + std::to_string(rec.acceptances) +
                             "," + std::to_string(rec.gradient_evaluations) + "," +
                             std::to_string(rec.nonconverged_cycles) + "," +
                             detail::format_double(rec.divergence_time) + "," +
                             detail::csv_quote(rec.divergence_message);
    for (std::size_t k = 0; k < rec.times.size(); ++k) {
      out << records.config_fingerprint << ',' << rec.instance << ','
          << detail::format_double(rec.times[k]) << ','
          << detail::format_double(k < rec.rmse.size() ? rec.rmse[k] : std::nan("")) << ','
          << detail::format_double(k < rec.acceptance_rate.size() ? rec.acceptance_rate[k]
                                                                  : std::nan(""))
          << tail << '\n';
    }
  }
}

inline RecordSet read_csv(std::istream& in, const std::string& context = "csv") {
  std::string line;
  if (!std::getline(in, line)) throw IoError(context + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw IoError(context + ": unexpected header");

  RecordSet out;
  std::map<Index, ResultRecord> by_id;
  using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = context + ":" + std::to_string(line_no);
    std::vector<std::string> f;
    try {
      Tokenizer tok(line);
      f.assign(tok.begin(), tok.end());
    } catch (const boost::escaped_list_error& e) {
      throw IoError(where + ": " + e.what());
    }
    if (f.size() != 12) throw IoError(where + ": expected 12 fields, got " + std::to_string(f.size()));
    out.config_fingerprint = f[0];
    const auto id = static_cast<Index>(detail::read_double(f[1], where));
    auto& rec = by_id[id];
    rec.instance = id;
    rec.times.push_back(detail::read_double(f[2], where));
    rec.rmse.push_back(detail::read_double(f[3], where));
    rec.acceptance_rate.push_back(detail::read_double(f[4], where));
    rec.diverged = f[5] == "1";
    rec.proposals = static_cast<Index>(detail::read_double(f[6], where));
    rec.acceptances = static_cast<Index>(detail::read_double(f[7], where));
    rec.gradient_evaluations = static_cast<Index>(detail::read_double(f[8], where));
    rec.nonconverged_cycles = static_cast<Index>(detail::read_double(f[9], where));
    rec.divergence_time = detail::read_double(f[10], where);
    rec.divergence_message = f[11];
  }
  for (auto& [id, rec] : by_id) out.instances.push_back(std::move(rec));
  return out;
}

// -----------------------------------------------------------------------------
// JSON: {config_fingerprint, instances: [{instance, times, rmse, diagnostics, ...}]}.
// NaN is written as null.

inline nlohmann::json to_json(const RecordSet& records) {
  nlohmann::json j;
  j["config_fingerprint"] = records.config_fingerprint;
  j["instances"] = nlohmann::json::array();
  for (const auto& rec : records.instances) {
    nlohmann::json r;
    r["instance"] = rec.instance;
    r["times"] = rec.times;
    r["rmse"] = rec.rmse;
    r["diverged"] = rec.diverged;
    r["divergence_time"] = rec.divergence_time;
    r["divergence_message"] = rec.divergence_message;
    r["diagnostics"] = {
        {"acceptance_rate", rec.acceptance_rate},
        {"proposals", rec.proposals},
        {"acceptances", rec.acceptances},
        {"gradient_evaluations", rec.gradient_evaluations},
        {"nonconverged_cycles", rec.nonconverged_cycles},
    };
    j["instances"].push_back(std::move(r));
  }
  return j;
}

namespace detail {
inline double json_double(const nlohmann::json& v) {
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}
inline std::vector<double> json_doubles(const nlohmann::json& v) {
  std::vector<double> out;
  for (const auto& x : v) out.push_back(json_double(x));
  return out;
}
}  // namespace detail

inline RecordSet from_json(const nlohmann::json& j) {
  RecordSet out;
  out.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  for (const auto& r : j.at("instances")) {
    ResultRecord rec;
    rec.instance = r.at("instance").get<Index>();
    rec.times = detail::json_doubles(r.at("times"));
    rec.rmse = detail::json_doubles(r.at("rmse"));
    rec.diverged = r.at("diverged").get<bool>();
    rec.divergence_time = detail::json_double(r.at("divergence_time"));
    rec.divergence_message = r.at("divergence_message").get<std::string>();
    const auto& d = r.at("diagnostics");
    rec.acceptance_rate = detail::json_doubles(d.at("acceptance_rate"));
    rec.proposals = d.at("proposals").get<Index>();
    rec.acceptances = d.at("acceptances").get<Index>();
    rec.gradient_evaluations = d.at("gradient_evaluations").get<Index>();
    rec.nonconverged_cycles = d.at("nonconverged_cycles").get<Index>();
    out.instances.push_back(std::move(rec));
  }
  return out;
}

// -----------------------------------------------------------------------------
// Files

inline void export_records(const RecordSet& records, RecordFormat format,
                           const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  if (format == RecordFormat::csv) {
    write_csv(records, out);
  } else {
    out << to_json(records).dump(1) << '\n';
  }
  detail::finish_write(out, path);
}

/// Format from the extension: ".csv" reads CSV, anything else JSON.
inline RecordSet import_records(const std::filesystem::path& path) {
  auto in = detail::open_for_read(path);
  if (path.extension() == ".csv") return read_csv(in, path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  auto in = detail::open_for_read(path);
  return parse_experiment_config(in);
}

}  // namespace hmcda
