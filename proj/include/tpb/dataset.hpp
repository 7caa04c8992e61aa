#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tpb/config.hpp"

namespace tpb {

/// Reads prompts in file order. csv: column `prompt` (RFC 4180 quoting);
/// json: array of strings or of objects with a `prompt` field; jsonl: one
/// string or object per line. Throws ConfigNotFound, ParseError,
/// MissingColumn, BadValue (unknown format).
std::vector<std::string> load_prompts(const std::filesystem::path& path,
                                      const std::string& format);

using TokenCounter = std::function<std::uint64_t(const std::string&)>;

/// Number of whitespace-separated words.
std::uint64_t whitespace_token_count(const std::string& prompt);

/// Runs `cmd` with the prompt on stdin and parses the integer it prints.
TokenCounter command_token_counter(std::string cmd);

struct BucketedPrompts {
  /// Same order as the input buckets; prompts keep dataset order.
  std::vector<std::vector<std::string>> buckets;
  std::size_t dropped = 0;
};

/// Assigns each prompt to the bucket holding its token count. Throws
/// EmptyDataset, OverlappingBuckets, BadValue (empty bucket range).
BucketedPrompts bucket_prompts(const std::vector<std::string>& prompts,
                               const std::vector<ContextBucket>& buckets,
                               const TokenCounter& count = whitespace_token_count);

/// One prompt per line, JSON-encoded strings (jsonl), the format handed to
/// workloads through TPB_PROMPTS_FILE.
void write_prompts_file(const std::vector<std::string>& prompts,
                        const std::filesystem::path& path);

}  // namespace tpb
