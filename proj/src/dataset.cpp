#include "tpb/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "tpb/error.hpp"
#include "tpb/process.hpp"

namespace tpb {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigNotFound, "dataset not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

[[noreturn]] void parse_error(const fs::path& path, std::size_t line, const std::string& what) {
  throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line) + ": " + what);
}

// RFC 4180 records; CRLF tolerated. Quoted fields may span lines.
std::vector<std::vector<std::string>> csv_records(const std::string& text, const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t line = 1;
  std::size_t quote_line = 0;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started) parse_error(path, line, "stray quote inside unquoted field");
        quoted = true;
        field_started = true;
        quote_line = line;
        break;
      case ',': end_field(); break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') break;
        field += c;
        break;
      case '\n':
        end_row();
        ++line;
        break;
      default:
        field += c;
        field_started = true;
    }
  }
  if (quoted) parse_error(path, quote_line, "unterminated quoted field");
  if (field_started || !field.empty() || !row.empty()) end_row();
  return rows;
}

std::vector<std::string> load_csv(const fs::path& path) {
  auto rows = csv_records(slurp(path), path);
  if (rows.empty()) parse_error(path, 1, "missing header row");
  const auto& header = rows.front();
  auto col = std::find(header.begin(), header.end(), "prompt");
  if (col == header.end()) {
    throw Error(ErrorCode::MissingColumn, path.string() + ": no 'prompt' column");
  }
  const auto idx = static_cast<std::size_t>(col - header.begin());
  std::vector<std::string> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != header.size()) {
      parse_error(path, r + 1, "expected " + std::to_string(header.size()) + " fields, got " +
                                   std::to_string(rows[r].size()));
    }
    out.push_back(std::move(rows[r][idx]));
  }
  return out;
}

std::string prompt_of(const json& v, const fs::path& path, std::size_t line) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_object()) {
    auto it = v.find("prompt");
    if (it == v.end()) throw Error(ErrorCode::MissingColumn, path.string() + ": object without 'prompt'");
    if (!it->is_string()) parse_error(path, line, "'prompt' must be a string");
    return it->get<std::string>();
  }
  parse_error(path, line, "expected a string or an object with 'prompt'");
}

std::vector<std::string> load_json(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(slurp(path));
  } catch (const json::parse_error& e) {
    parse_error(path, 1, e.what());
  }
  if (!doc.is_array()) parse_error(path, 1, "expected a JSON array");
  std::vector<std::string> out;
  for (const auto& v : doc) out.push_back(prompt_of(v, path, 1));
  return out;
}

std::vector<std::string> load_jsonl(const fs::path& path) {
  std::istringstream in(slurp(path));
  std::vector<std::string> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json v;
    try {
      v = json::parse(line);
    } catch (const json::parse_error& e) {
      parse_error(path, n, e.what());
    }
    out.push_back(prompt_of(v, path, n));
  }
  return out;
}

}  // namespace

std::vector<std::string> load_prompts(const fs::path& path, const std::string& format) {
  if (format == "csv") return load_csv(path);
  if (format == "json") return load_json(path);
  if (format == "jsonl") return load_jsonl(path);
  throw Error(ErrorCode::BadValue, "dataset format must be csv, json or jsonl, got '" + format + "'");
}

std::uint64_t whitespace_token_count(const std::string& prompt) {
  std::uint64_t n = 0;
  bool in_word = false;
  for (unsigned char c : prompt) {
    const bool space = std::isspace(c) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

TokenCounter command_token_counter(std::string cmd) {
  return [cmd = std::move(cmd)](const std::string& prompt) {
    const auto r = run_command(cmd, prompt);
    if (r.exit_code != 0) {
      throw Error(ErrorCode::WorkloadSpawnFailed,
                  "token counter exited with " + std::to_string(r.exit_code));
    }
    const auto b = r.output.find_first_not_of(" \t\r\n");
    const auto e = r.output.find_last_not_of(" \t\r\n");
    std::uint64_t n = 0;
    const char* first = b == std::string::npos ? r.output.data() : r.output.data() + b;
    const char* last = b == std::string::npos ? first : r.output.data() + e + 1;
    auto [ptr, ec] = std::from_chars(first, last, n);
    if (ec != std::errc() || ptr != last) {
      throw Error(ErrorCode::BadValue, "token counter printed '" + r.output + "'");
    }
    return n;
  };
}

BucketedPrompts bucket_prompts(const std::vector<std::string>& prompts,
                               const std::vector<ContextBucket>& buckets,
                               const TokenCounter& count) {
  if (prompts.empty()) throw Error(ErrorCode::EmptyDataset, "dataset has no prompts");
  for (const auto& b : buckets) {
    if (b.min_tokens >= b.max_tokens) {
      throw Error(ErrorCode::BadValue, "bucket [" + std::to_string(b.min_tokens) + ", " +
                                           std::to_string(b.max_tokens) + ") is empty");
    }
  }
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    for (std::size_t j = i + 1; j < buckets.size(); ++j) {
      const auto& a = buckets[i];
      const auto& b = buckets[j];
      if (a.min_tokens < b.max_tokens && b.min_tokens < a.max_tokens) {
        throw Error(ErrorCode::OverlappingBuckets,
                    "buckets " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
      }
    }
  }
  BucketedPrompts out;
  out.buckets.resize(buckets.size());
  for (const auto& p : prompts) {
    const auto n = count(p);
    auto it = std::find_if(buckets.begin(), buckets.end(),
                           [n](const ContextBucket& b) { return b.contains(n); });
    if (it == buckets.end()) {
      ++out.dropped;
    } else {
      out.buckets[static_cast<std::size_t>(it - buckets.begin())].push_back(p);
    }
  }
  return out;
}

void write_prompts_file(const std::vector<std::string>& prompts, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (const auto& p : prompts) out << json(p).dump() << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace tpb
