#include "metrics.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <stdexcept>

#include "json.hpp"

namespace gk {

namespace {

void num(std::string& out, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  out += buf;
}

}  // namespace

const char* const kMetricCsvHeader =
    "step,train_loss,train_acc,test_acc,defect_median,defect_q25,defect_q75";

std::string metric_row_json(const MetricRow& row) {
  std::string out = "{\"step\":" + std::to_string(row.step);
  if (row.has_eval) {
    out += ",\"train_loss\":";
    num(out, row.train_loss);
    out += ",\"train_acc\":";
    num(out, row.train_acc);
    out += ",\"test_acc\":";
    num(out, row.test_acc);
  }
  if (row.has_defect) {
    out += ",\"defect_median\":";
    num(out, row.defect_median);
    out += ",\"defect_q25\":";
    num(out, row.defect_q25);
    out += ",\"defect_q75\":";
    num(out, row.defect_q75);
  }
  out += "}";
  return out;
}

std::string metric_row_csv(const MetricRow& row) {
  std::string out = std::to_string(row.step);
  if (row.has_eval) {
    out += ',';
    num(out, row.train_loss);
    out += ',';
    num(out, row.train_acc);
    out += ',';
    num(out, row.test_acc);
  } else {
    out += ",,,";
  }
  if (row.has_defect) {
    out += ',';
    num(out, row.defect_median);
    out += ',';
    num(out, row.defect_q25);
    out += ',';
    num(out, row.defect_q75);
  } else {
    out += ",,,";
  }
  return out;
}

void MetricsWriter::open(const std::string& jsonl_path,
                         const std::string& csv_path, bool append) {
  const auto mode = append ? std::ios::app : std::ios::trunc;
  jsonl_.open(jsonl_path, mode);
  if (!jsonl_)
    throw std::runtime_error("metrics: cannot open " + jsonl_path);
  csv_.open(csv_path, mode);
  if (!csv_) throw std::runtime_error("metrics: cannot open " + csv_path);
  if (!append) csv_ << kMetricCsvHeader << '\n';
}

void MetricsWriter::write(const MetricRow& row) {
  if (!jsonl_.is_open()) throw std::runtime_error("metrics: writer not open");
  jsonl_ << metric_row_json(row) << '\n';
  jsonl_.flush();
  csv_ << metric_row_csv(row) << '\n';
  csv_.flush();
  if (!jsonl_ || !csv_) throw std::runtime_error("metrics: write failed");
}

void MetricsWriter::close() {
  if (jsonl_.is_open()) jsonl_.close();
  if (csv_.is_open()) csv_.close();
}

MetricRow parse_metric_row(const std::string& json_line) {
  nlohmann::json j = nlohmann::json::parse(json_line);
  MetricRow row;
  row.step = j.at("step").get<int64_t>();
  if (j.contains("train_loss")) {
    row.has_eval = true;
    row.train_loss = j.at("train_loss").get<double>();
    row.train_acc = j.at("train_acc").get<double>();
    row.test_acc = j.at("test_acc").get<double>();
  }
  if (j.contains("defect_median")) {
    row.has_defect = true;
    row.defect_median = j.at("defect_median").get<double>();
    row.defect_q25 = j.at("defect_q25").get<double>();
    row.defect_q75 = j.at("defect_q75").get<double>();
  }
  return row;
}

std::vector<MetricRow> read_metric_stream(const std::string& jsonl_path) {
  std::ifstream in(jsonl_path);
  if (!in) throw std::runtime_error("metrics: cannot open " + jsonl_path);
  std::vector<MetricRow> rows;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      rows.push_back(parse_metric_row(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(jsonl_path + ":" + std::to_string(line_no) +
                               ": " + e.what());
    }
  }
  return rows;
}

namespace {

// Rewrites a metrics file keeping the original lines verbatim (resume must
// leave the surviving prefix byte-identical). `step_of` extracts the step
// from one line; a negative return keeps the line unconditionally (header).
void truncate_lines(const std::string& path, int64_t keep_through,
                    const std::function<int64_t(const std::string&)>& step_of) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("metrics: cannot open " + path);
  const std::string tmp = path + ".tmp";
  std::ofstream out(tmp, std::ios::trunc);
  if (!out) throw std::runtime_error("metrics: cannot open " + tmp);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (step_of(line) > keep_through) continue;
    out << line << '\n';
  }
  out.close();
  if (!out) throw std::runtime_error("metrics: write failed: " + tmp);
  std::filesystem::rename(tmp, path);
}

}  // namespace

void truncate_metrics_after(const std::string& jsonl_path,
                            const std::string& csv_path,
                            int64_t keep_through) {
  truncate_lines(jsonl_path, keep_through, [](const std::string& line) {
    return parse_metric_row(line).step;
  });
  bool header = true;
  truncate_lines(csv_path, keep_through, [&header](const std::string& line) {
    if (header) {
      header = false;
      return int64_t(-1);
    }
    return int64_t(std::strtoll(line.c_str(), nullptr, 10));
  });
}

std::string summary_to_json(const RunSummary& s) {
  nlohmann::json j;
  j["run_id"] = s.run_id;
  j["config_hash"] = s.config_hash;
  j["seed"] = s.seed;
  j["grok_step"] = s.grok_step;
  j["onset_step"] = s.onset_step;
  j["lead_delta"] = s.lead_delta;
  j["lead_fraction"] = s.lead_fraction;
  j["last_step"] = s.last_step;
  j["final_train_acc"] = s.final_train_acc;
  j["final_test_acc"] = s.final_test_acc;
  j["wall_seconds"] = s.wall_seconds;
  j["rng_note"] = s.rng_note;
  j["flags"] = s.flags;
  return j.dump(2) + "\n";
}

void write_summary_json(const std::string& path, const RunSummary& s) {
  const std::string tmp = path + ".tmp";
  std::ofstream out(tmp);
  if (!out) throw std::runtime_error("summary: cannot open " + tmp);
  out << summary_to_json(s);
  out.close();
  if (!out) throw std::runtime_error("summary: write failed: " + tmp);
  std::filesystem::rename(tmp, path);
}

RunSummary read_summary_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("summary: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  RunSummary s;
  s.run_id = j.at("run_id").get<std::string>();
  s.config_hash = j.at("config_hash").get<uint64_t>();
  s.seed = j.at("seed").get<uint64_t>();
  s.grok_step = j.at("grok_step").get<int64_t>();
  s.onset_step = j.at("onset_step").get<int64_t>();
  s.lead_delta = j.at("lead_delta").get<double>();
  s.lead_fraction = j.at("lead_fraction").get<double>();
  s.last_step = j.at("last_step").get<int64_t>();
  s.final_train_acc = j.at("final_train_acc").get<double>();
  s.final_test_acc = j.at("final_test_acc").get<double>();
  s.wall_seconds = j.at("wall_seconds").get<double>();
  s.rng_note = j.at("rng_note").get<std::string>();
  s.flags = j.at("flags").get<std::vector<std::string>>();
  return s;
}

std::vector<double> moving_average(const std::vector<double>& values,
                                   int window) {
  if (window < 1) throw std::runtime_error("moving_average: window must be >= 1");
  std::vector<double> out(values.size());
  double sum = 0;
  for (size_t i = 0; i < values.size(); ++i) {
    sum += values[i];
    if (i >= size_t(window)) sum -= values[i - size_t(window)];
    const size_t n = std::min(i + 1, size_t(window));
    out[i] = sum / double(n);
  }
  return out;
}

int count_threshold_crossings(const std::vector<double>& values,
                              double threshold) {
  int n = 0;
  for (size_t i = 1; i < values.size(); ++i)
    if ((values[i] >= threshold) != (values[i - 1] >= threshold)) ++n;
  return n;
}

}  // namespace gk
