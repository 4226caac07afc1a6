#include "calib/csv.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace calib {

namespace {

[[noreturn]] void fail(const std::string& path, long line, const std::string& what) {
  throw std::runtime_error(path + ": line " + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

double parse_number(const std::string& path, long line, const std::string& field,
                    const std::string& column) {
  const std::string t = trim(field);
  if (t.empty()) fail(path, line, "empty " + column + " cell");
  double value = 0.0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last)
    fail(path, line, "column '" + column + "' has non-numeric value '" + t + "'");
  return value;
}

// Reads all lines, strips a trailing \r per line, drops one trailing blank
// line if present, and enforces a non-empty file with the expected header.
std::vector<std::string> read_lines(const std::string& path,
                                    const std::vector<std::string>& expected_header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open file");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw std::runtime_error(path + ": file is empty");

  const auto header = split_fields(lines[0]);
  if (header.size() != expected_header.size()) {
    std::ostringstream msg;
    msg << "expected " << expected_header.size() << " columns (";
    for (std::size_t i = 0; i < expected_header.size(); ++i)
      msg << (i ? "," : "") << expected_header[i];
    msg << ") but header has " << header.size();
    fail(path, 1, msg.str());
  }
  for (std::size_t i = 0; i < header.size(); ++i)
    if (trim(header[i]) != expected_header[i])
      fail(path, 1, "expected column '" + expected_header[i] + "' but found '" + trim(header[i]) + "'");
  if (lines.size() == 1) throw std::runtime_error(path + ": no data rows after the header");
  return lines;
}

void check_width(const std::string& path, long line, const std::vector<std::string>& fields,
                 std::size_t want) {
  if (fields.size() != want)
    fail(path, line, "expected " + std::to_string(want) + " fields but found " +
                         std::to_string(fields.size()));
}

}  // namespace

bool is_leap_year(long year) {
  return year % 4 == 0 && (year % 100 != 0 || year % 400 == 0);
}

long days_from_civil(long year, int month, int day) {
  year -= month <= 2;
  const long era = (year >= 0 ? year : year - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(year - era * 400);
  const unsigned doy =
      static_cast<unsigned>((153 * (month + (month > 2 ? -3 : 9)) + 2) / 5 + day - 1);
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long>(doe) - 719468;
}

int day_of_week(long days) {
  return static_cast<int>(((days + 4) % 7 + 7) % 7);
}

int day_of_year(long year, int month, int day) {
  return static_cast<int>(days_from_civil(year, month, day) - days_from_civil(year, 1, 1));
}

bool parse_iso_date(const std::string& text, long& year, int& month, int& day) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return false;
  for (int i : {0, 1, 2, 3, 5, 6, 8, 9})
    if (!std::isdigit(static_cast<unsigned char>(text[static_cast<std::size_t>(i)]))) return false;
  year = std::stol(text.substr(0, 4));
  month = std::stoi(text.substr(5, 2));
  day = std::stoi(text.substr(8, 2));
  if (month < 1 || month > 12) return false;
  static const int lengths[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  int cap = lengths[month - 1];
  if (month == 2 && is_leap_year(year)) cap = 29;
  return day >= 1 && day <= cap;
}

std::vector<SalesRow> load_sales_csv(const std::string& path) {
  const auto lines = read_lines(path, {"date", "item_id", "units_sold"});
  std::vector<SalesRow> rows;
  rows.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const long line = static_cast<long>(i) + 1;
    const auto fields = split_fields(lines[i]);
    check_width(path, line, fields, 3);
    SalesRow row;
    long y;
    int m, d;
    const std::string date = trim(fields[0]);
    if (!parse_iso_date(date, y, m, d))
      fail(path, line, "column 'date' has invalid ISO-8601 value '" + date + "'");
    row.day = days_from_civil(y, m, d);
    row.item = trim(fields[1]);
    if (row.item.empty()) fail(path, line, "empty item_id cell");
    row.units = parse_number(path, line, fields[2], "units_sold");
    if (row.units < 0) fail(path, line, "column 'units_sold' is negative");
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<ForecastOutcomeRow> load_forecast_csv(const std::string& path) {
  const auto lines = read_lines(path, {"mean", "stddev", "outcome"});
  std::vector<ForecastOutcomeRow> rows;
  rows.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const long line = static_cast<long>(i) + 1;
    const auto fields = split_fields(lines[i]);
    check_width(path, line, fields, 3);
    ForecastOutcomeRow row;
    row.mean = parse_number(path, line, fields[0], "mean");
    row.stddev = parse_number(path, line, fields[1], "stddev");
    if (!(row.stddev > 0)) fail(path, line, "column 'stddev' must be positive");
    row.outcome = parse_number(path, line, fields[2], "outcome");
    rows.push_back(row);
  }
  return rows;
}

std::vector<double> load_pit_csv(const std::string& path) {
  const auto lines = read_lines(path, {"pit"});
  std::vector<double> values;
  values.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const long line = static_cast<long>(i) + 1;
    const auto fields = split_fields(lines[i]);
    check_width(path, line, fields, 1);
    const double p = parse_number(path, line, fields[0], "pit");
    if (!(p >= 0.0 && p <= 1.0)) fail(path, line, "column 'pit' must lie in [0, 1]");
    values.push_back(p);
  }
  return values;
}

LabeledRows load_labeled_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open file");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw std::runtime_error(path + ": file is empty");

  const auto header = split_fields(lines[0]);
  if (header.size() < 2) fail(path, 1, "need at least one feature column plus 'label'");
  if (trim(header.back()) != "label")
    fail(path, 1, "last column must be named 'label' but found '" + trim(header.back()) + "'");
  if (lines.size() == 1) throw std::runtime_error(path + ": no data rows after the header");

  const std::size_t cols = header.size();
  const long n = static_cast<long>(lines.size()) - 1;
  LabeledRows out;
  out.features.resize(n, static_cast<long>(cols) - 1);
  out.labels.resize(static_cast<std::size_t>(n));
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const long lineno = static_cast<long>(i) + 1;
    const auto fields = split_fields(lines[i]);
    check_width(path, lineno, fields, cols);
    for (std::size_t c = 0; c + 1 < cols; ++c)
      out.features(static_cast<long>(i) - 1, static_cast<long>(c)) =
          parse_number(path, lineno, fields[c], trim(header[c]));
    const double lab = parse_number(path, lineno, fields[cols - 1], "label");
    const int l = static_cast<int>(lab);
    if (static_cast<double>(l) != lab || l < 0)
      fail(path, lineno, "column 'label' must be a nonnegative integer");
    out.labels[i - 1] = l;
  }
  return out;
}

std::string csv_join(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += fields[i];
  }
  out += '\n';
  return out;
}

}  // namespace calib
