#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gk {

// One matrix tracked by a snapshot archive: its name, its shape, and its
// offset into the flat parameter (or gradient-sum) vector it is copied from.
struct MatrixSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  int64_t off = 0;
};

// On-disk weight-trajectory store: a JSON manifest (run id, interval, matrix
// table, recorded steps) plus one binary file per snapshot step holding the
// matrices' float32 little-endian data concatenated in manifest order.
// Round-trips are bit-exact. The same container records accumulated-gradient
// matrices (a second archive rooted at a sibling directory).
class SnapshotArchive {
 public:
  SnapshotArchive() = default;

  static SnapshotArchive create(const std::string& dir,
                                const std::string& run_id, int64_t interval,
                                std::vector<MatrixSpec> mats);
  static SnapshotArchive open(const std::string& dir);

  // Appends one snapshot copied from the flat source vector; step must exceed
  // the last recorded step.
  void record(const float* flat, int64_t step);

  std::vector<float> read_matrix(int64_t step, const std::string& name) const;
  // All matrices concatenated in manifest order.
  std::vector<float> read_all(int64_t step) const;

  // Drops every snapshot with step > keep_through (resume support).
  void truncate_after(int64_t keep_through);

  const std::string& dir() const { return dir_; }
  const std::string& run_id() const { return run_id_; }
  int64_t interval() const { return interval_; }
  const std::vector<int64_t>& steps() const { return steps_; }
  const std::vector<MatrixSpec>& matrices() const { return mats_; }
  const MatrixSpec& spec(const std::string& name) const;
  bool has_matrix(const std::string& name) const;
  // Floats per snapshot record.
  int64_t record_size() const { return rec_size_; }
  // Float offset of a matrix within a record.
  int64_t file_offset(const std::string& name) const;

 private:
  void save_manifest() const;
  std::string bin_path(int64_t step) const;
  void init_layout();

  std::string dir_;
  std::string run_id_;
  int64_t interval_ = 0;
  std::vector<MatrixSpec> mats_;
  std::vector<int64_t> steps_;
  std::vector<int64_t> file_off_;
  int64_t rec_size_ = 0;
};

}  // namespace gk
