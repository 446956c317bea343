#include "flowlab/metrics.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "flowlab/errors.hpp"

namespace flowlab {

namespace {

double now_sec() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

MetricLog::MetricLog(std::vector<std::string> columns)
    : columns_(std::move(columns)), start_time_(now_sec()) {
  require(!columns_.empty(), "E_ARG", "metric log needs at least one column");
}

void MetricLog::append(std::size_t step, const std::vector<double>& values) {
  require(values.size() == columns_.size(), "E_ARG", "metric row width mismatch");
  require(rows_.empty() || step > rows_.back().step, "E_ARG",
          "metric steps must be strictly increasing");
  Row row;
  row.step = step;
  row.wall_time_sec = now_sec() - start_time_;
  row.values = values;
  rows_.push_back(std::move(row));
}

std::size_t MetricLog::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i)
    if (columns_[i] == name) return i;
  fail("E_ARG", "no metric column named '" + name + "'");
}

std::vector<double> MetricLog::series(const std::string& name) const {
  const std::size_t idx = column(name);
  std::vector<double> out;
  out.reserve(rows_.size());
  for (const Row& r : rows_) out.push_back(r.values[idx]);
  return out;
}

std::vector<std::size_t> MetricLog::steps() const {
  std::vector<std::size_t> out;
  out.reserve(rows_.size());
  for (const Row& r : rows_) out.push_back(r.step);
  return out;
}

void MetricLog::write_tsv(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  require(f.good(), "E_IO", "cannot open metric log for writing: " + path);
  f << "step";
  for (const std::string& c : columns_) f << '\t' << c;
  f << '\n';
  for (const Row& r : rows_) {
    f << r.step;
    for (double v : r.values) f << '\t' << format_double(v);
    f << '\n';
  }
  require(f.good(), "E_IO", "short write to metric log: " + path);
}

MetricLog MetricLog::read_tsv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "E_IO", "cannot open metric log: " + path);
  std::string line;
  require(static_cast<bool>(std::getline(f, line)), "E_IO", "empty metric log: " + path);

  std::vector<std::string> columns;
  {
    std::istringstream header(line);
    std::string cell;
    require(static_cast<bool>(std::getline(header, cell, '\t')) && cell == "step", "E_IO",
            "metric log header must start with 'step'");
    while (std::getline(header, cell, '\t')) columns.push_back(cell);
  }
  MetricLog log(columns);
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    require(static_cast<bool>(std::getline(row, cell, '\t')), "E_IO", "bad metric row");
    const std::size_t step = std::stoull(cell);
    std::vector<double> values;
    while (std::getline(row, cell, '\t')) values.push_back(std::stod(cell));
    log.append(step, values);
  }
  return log;
}

void emit_curves(const MetricLog& log, const std::string& dir) {
  require(!log.empty(), "E_STATE", "cannot emit curves from an empty metric log");
  std::filesystem::create_directories(dir);
  for (std::size_t c = 0; c < log.columns().size(); ++c) {
    const std::string path = dir + "/" + log.columns()[c] + ".csv";
    std::ofstream f(path, std::ios::trunc | std::ios::binary);
    require(f.good(), "E_IO", "cannot open curve file for writing: " + path);
    for (const MetricLog::Row& r : log.rows())
      f << r.step << ',' << format_double(r.values[c]) << '\n';
    require(f.good(), "E_IO", "short write to curve file: " + path);
  }
}

}  // namespace flowlab
