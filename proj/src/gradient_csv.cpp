#include "maskedkrum/gradient_csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <string>

#include "maskedkrum/error.hpp"

namespace maskedkrum {
namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(const std::string& field, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kValidation, "line " + std::to_string(line_no) +
                                            ": not a number '" + field + "'");
  }
}

}  // namespace

std::vector<GradientVector> read_gradient_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kFormat, "empty gradient CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line);
  if (header.empty() || header[0] != "client_id") {
    throw Error(ErrorCode::kFormat, "gradient CSV must start with 'client_id'");
  }
  const std::size_t dim = header.size() - 1;
  for (std::size_t k = 0; k < dim; ++k) {
    if (header[k + 1] != "v" + std::to_string(k)) {
      throw Error(ErrorCode::kFormat, "unexpected column '" + header[k + 1] + "'");
    }
  }
  std::vector<GradientVector> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line);
    if (fields.size() != dim + 1) {
      throw Error(ErrorCode::kDimension, "line " + std::to_string(line_no) + " has " +
                                             std::to_string(fields.size()) + " fields");
    }
    GradientVector g;
    const auto& id = fields[0];
    auto [ptr, ec] = std::from_chars(id.data(), id.data() + id.size(), g.client_id);
    if (ec != std::errc{} || ptr != id.data() + id.size()) {
      throw Error(ErrorCode::kValidation, "line " + std::to_string(line_no) + ": bad client_id");
    }
    g.values.reserve(dim);
    for (std::size_t k = 0; k < dim; ++k) g.values.push_back(parse_double(fields[k + 1], line_no));
    require_finite(g.values);
    rows.push_back(std::move(g));
  }
  return rows;
}

std::vector<GradientVector> read_gradient_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return read_gradient_csv(in);
}

void write_gradient_csv(std::ostream& out, const std::vector<GradientVector>& rows) {
  const std::size_t dim = rows.empty() ? 0 : rows.front().dim();
  out << "client_id";
  for (std::size_t k = 0; k < dim; ++k) out << ",v" << k;
  out << '\n';
  char buf[32];
  for (const auto& g : rows) {
    out << g.client_id;
    for (double v : g.values) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace maskedkrum
