#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace calib {

// Calendar helpers. Day counts are days since 1970-01-01 (which was a
// Thursday); negative values are fine. day_of_week uses 0 = Sunday.
long days_from_civil(long year, int month, int day);
int day_of_week(long days);
int day_of_year(long year, int month, int day);  // 0-based, Jan 1 -> 0
bool is_leap_year(long year);

// Strict "YYYY-MM-DD". Returns false on any malformation, including
// out-of-range months or days.
bool parse_iso_date(const std::string& text, long& year, int& month, int& day);

// One observation per item per day. `day` is days since 1970-01-01.
struct SalesRow {
  long day = 0;
  std::string item;
  double units = 0.0;
};

// Forecast issued as mean/stddev with the realized outcome.
struct ForecastOutcomeRow {
  double mean = 0.0;
  double stddev = 0.0;
  double outcome = 0.0;
};

// All loaders demand an exact header line and reject malformed input with
// the 1-based file line number in the error message (the header is line 1).
// Files must be comma-separated without quoting. Empty files are errors.
std::vector<SalesRow> load_sales_csv(const std::string& path);             // date,item_id,units_sold
std::vector<ForecastOutcomeRow> load_forecast_csv(const std::string& path);  // mean,stddev,outcome
std::vector<double> load_pit_csv(const std::string& path);                 // pit

// Numeric feature columns followed by an integer `label` column; the
// feature column names are free-form.
struct LabeledRows {
  Eigen::MatrixXd features;
  std::vector<int> labels;
};
LabeledRows load_labeled_csv(const std::string& path);

// Tiny writer helpers shared by report emission.
std::string csv_join(const std::vector<std::string>& fields);

}  // namespace calib
