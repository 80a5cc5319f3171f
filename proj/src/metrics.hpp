#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace gk {

// Append-only metric streams: one JSON document per scheduled step with fixed
// field names and formatting (byte-identical across reruns of the same
// config+seed), a flat CSV alongside, and the end-of-run summary document.

struct MetricRow {
  int64_t step = 0;
  bool has_eval = false;
  double train_loss = 0;
  double train_acc = 0;
  double test_acc = 0;
  bool has_defect = false;
  double defect_median = 0;
  double defect_q25 = 0;
  double defect_q75 = 0;
};

// {"step":...,"train_loss":...,...} with %.10g numbers; absent groups omit
// their fields entirely.
std::string metric_row_json(const MetricRow& row);
// step,train_loss,train_acc,test_acc,defect_median,defect_q25,defect_q75
// with empty fields for absent values.
std::string metric_row_csv(const MetricRow& row);
extern const char* const kMetricCsvHeader;

class MetricsWriter {
 public:
  // append=false truncates and writes the CSV header; append=true continues
  // existing files (resume).
  void open(const std::string& jsonl_path, const std::string& csv_path,
            bool append);
  void write(const MetricRow& row);  // line-buffered, flushed per row
  void close();
  bool is_open() const { return jsonl_.is_open(); }

 private:
  std::ofstream jsonl_, csv_;
};

// Parses one JSONL line back into a row (inverse of metric_row_json).
MetricRow parse_metric_row(const std::string& json_line);
// Reads a whole stream; throws on malformed lines naming the path.
std::vector<MetricRow> read_metric_stream(const std::string& jsonl_path);

// Drops rows with step > keep_through from both files (resume support).
void truncate_metrics_after(const std::string& jsonl_path,
                            const std::string& csv_path, int64_t keep_through);

struct RunSummary {
  std::string run_id;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
  int64_t grok_step = -1;
  int64_t onset_step = -1;
  double lead_delta = 0;
  double lead_fraction = 0;
  int64_t last_step = -1;
  double final_train_acc = 0;
  double final_test_acc = 0;
  double wall_seconds = 0;  // excluded from determinism guarantees
  std::string rng_note;     // named-stream provenance
  std::vector<std::string> flags;
};

std::string summary_to_json(const RunSummary& s);
void write_summary_json(const std::string& path, const RunSummary& s);
RunSummary read_summary_json(const std::string& path);

// Trailing moving average over up to `window` samples (window 1 = identity).
std::vector<double> moving_average(const std::vector<double>& values,
                                   int window);
// Number of indices i > 0 where (values[i] >= threshold) differs from
// (values[i-1] >= threshold).
int count_threshold_crossings(const std::vector<double>& values,
                              double threshold);

}  // namespace gk
