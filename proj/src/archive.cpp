#include "archive.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "snapshot archives are little-endian");

namespace gk {

namespace fs = std::filesystem;
using nlohmann::json;

SnapshotArchive SnapshotArchive::create(const std::string& dir,
                                        const std::string& run_id,
                                        int64_t interval,
                                        std::vector<MatrixSpec> mats) {
  if (mats.empty()) {
    throw std::runtime_error("snapshot archive " + run_id + ": no matrices");
  }
  SnapshotArchive a;
  a.dir_ = dir;
  a.run_id_ = run_id;
  a.interval_ = interval;
  a.mats_ = std::move(mats);
  a.init_layout();
  fs::create_directories(dir);
  a.save_manifest();
  return a;
}

SnapshotArchive SnapshotArchive::open(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) {
    throw std::runtime_error("snapshot archive: cannot open manifest in " +
                             dir);
  }
  json j = json::parse(in);
  SnapshotArchive a;
  a.dir_ = dir;
  a.run_id_ = j.at("run_id").get<std::string>();
  a.interval_ = j.at("interval").get<int64_t>();
  for (const auto& m : j.at("matrices")) {
    MatrixSpec s;
    s.name = m.at("name").get<std::string>();
    s.rows = m.at("rows").get<int>();
    s.cols = m.at("cols").get<int>();
    s.off = m.at("off").get<int64_t>();
    a.mats_.push_back(std::move(s));
  }
  a.steps_ = j.at("steps").get<std::vector<int64_t>>();
  for (size_t i = 1; i < a.steps_.size(); ++i) {
    if (a.steps_[i] <= a.steps_[i - 1]) {
      throw std::runtime_error("snapshot archive " + a.run_id_ +
                               ": steps not strictly increasing");
    }
  }
  a.init_layout();
  return a;
}

void SnapshotArchive::init_layout() {
  file_off_.clear();
  rec_size_ = 0;
  for (const MatrixSpec& m : mats_) {
    file_off_.push_back(rec_size_);
    rec_size_ += int64_t(m.rows) * m.cols;
  }
}

void SnapshotArchive::save_manifest() const {
  json j;
  j["run_id"] = run_id_;
  j["interval"] = interval_;
  j["matrices"] = json::array();
  for (const MatrixSpec& m : mats_) {
    j["matrices"].push_back(
        {{"name", m.name}, {"rows", m.rows}, {"cols", m.cols}, {"off", m.off}});
  }
  j["steps"] = steps_;
  const std::string tmp = dir_ + "/manifest.json.tmp";
  std::ofstream out(tmp, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("snapshot archive " + run_id_ +
                             ": cannot write manifest");
  }
  out << j.dump(1) << "\n";
  out.close();
  fs::rename(tmp, dir_ + "/manifest.json");
}

std::string SnapshotArchive::bin_path(int64_t step) const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%08lld.bin", (long long)step);
  return dir_ + "/" + buf;
}

void SnapshotArchive::record(const float* flat, int64_t step) {
  if (!steps_.empty() && step <= steps_.back()) {
    throw std::runtime_error("snapshot archive " + run_id_ + ": step " +
                             std::to_string(step) + " not after last " +
                             std::to_string(steps_.back()));
  }
  std::ofstream out(bin_path(step), std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("snapshot archive " + run_id_ +
                             ": cannot write snapshot at step " +
                             std::to_string(step));
  }
  for (const MatrixSpec& m : mats_) {
    out.write(reinterpret_cast<const char*>(flat + m.off),
              std::streamsize(int64_t(m.rows) * m.cols * 4));
  }
  out.close();
  if (!out) {
    throw std::runtime_error("snapshot archive " + run_id_ +
                             ": short write at step " + std::to_string(step));
  }
  steps_.push_back(step);
  save_manifest();
}

const MatrixSpec& SnapshotArchive::spec(const std::string& name) const {
  for (const MatrixSpec& m : mats_) {
    if (m.name == name) return m;
  }
  throw std::runtime_error("snapshot archive " + run_id_ +
                           ": unknown matrix " + name);
}

bool SnapshotArchive::has_matrix(const std::string& name) const {
  for (const MatrixSpec& m : mats_) {
    if (m.name == name) return true;
  }
  return false;
}

int64_t SnapshotArchive::file_offset(const std::string& name) const {
  for (size_t i = 0; i < mats_.size(); ++i) {
    if (mats_[i].name == name) return file_off_[i];
  }
  throw std::runtime_error("snapshot archive " + run_id_ +
                           ": unknown matrix " + name);
}

std::vector<float> SnapshotArchive::read_all(int64_t step) const {
  std::ifstream in(bin_path(step), std::ios::binary);
  if (!in) {
    throw std::runtime_error("snapshot archive " + run_id_ +
                             ": missing snapshot at step " +
                             std::to_string(step));
  }
  std::vector<float> buf(static_cast<size_t>(rec_size_));
  in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(rec_size_ * 4));
  if (in.gcount() != std::streamsize(rec_size_ * 4)) {
    throw std::runtime_error("snapshot archive " + run_id_ +
                             ": truncated snapshot at step " +
                             std::to_string(step));
  }
  return buf;
}

std::vector<float> SnapshotArchive::read_matrix(int64_t step,
                                                const std::string& name) const {
  const MatrixSpec& m = spec(name);
  const int64_t n = int64_t(m.rows) * m.cols;
  std::ifstream in(bin_path(step), std::ios::binary);
  if (!in) {
    throw std::runtime_error("snapshot archive " + run_id_ +
                             ": missing snapshot at step " +
                             std::to_string(step));
  }
  in.seekg(file_offset(name) * 4);
  std::vector<float> buf(static_cast<size_t>(n));
  in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n * 4));
  if (in.gcount() != std::streamsize(n * 4)) {
    throw std::runtime_error("snapshot archive " + run_id_ +
                             ": truncated snapshot at step " +
                             std::to_string(step));
  }
  return buf;
}

void SnapshotArchive::truncate_after(int64_t keep_through) {
  size_t keep = 0;
  while (keep < steps_.size() && steps_[keep] <= keep_through) ++keep;
  for (size_t i = keep; i < steps_.size(); ++i) {
    std::error_code ec;
    fs::remove(bin_path(steps_[i]), ec);
  }
  steps_.resize(keep);
  save_manifest();
}

}  // namespace gk
