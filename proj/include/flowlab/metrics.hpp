#pragma once

#include <string>
#include <vector>

namespace flowlab {

// Append-only metric table with a fixed column set and strictly increasing
// step numbers. Wall-clock time is tracked per row for the side log but is
// kept out of the serialized table so identical runs write identical bytes.
class MetricLog {
 public:
  MetricLog() = default;  // empty placeholder; real logs declare their columns
  explicit MetricLog(std::vector<std::string> columns);

  struct Row {
    std::size_t step = 0;
    double wall_time_sec = 0.0;
    std::vector<double> values;
  };

  void append(std::size_t step, const std::vector<double>& values);

  const std::vector<std::string>& columns() const { return columns_; }
  const std::vector<Row>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }

  // column index by name
  std::size_t column(const std::string& name) const;
  std::vector<double> series(const std::string& name) const;
  std::vector<std::size_t> steps() const;

  // Tab-separated table: header `step<TAB>col...`, one row per append, LF
  // line endings, full round-trip precision.
  void write_tsv(const std::string& path) const;
  static MetricLog read_tsv(const std::string& path);

 private:
  std::vector<std::string> columns_;
  std::vector<Row> rows_;
  double start_time_ = 0.0;
};

// One `step,value` CSV per metric column, written under dir. Errors on an
// empty log rather than writing empty files.
void emit_curves(const MetricLog& log, const std::string& dir);

std::string format_double(double v);  // shortest round-trip decimal

}  // namespace flowlab
