#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "morphlm/morpho/morpho_word.hpp"

namespace morphlm::morpho {

/// Declarative toy grammar. File format, one directive per line:
///   STEM <surface> <POS>
///   PREFIX <surface>
///   SUFFIX <surface>
/// Blank lines and lines starting with '#' are ignored.
struct Grammar {
    std::map<std::string, std::set<std::string>> stems;  // surface -> POS tags
    std::set<std::string> prefixes;
    std::set<std::string> suffixes;

    static Grammar parse(std::string_view text);
    static Grammar load(const std::filesystem::path& path);
    std::string to_text() const;
};

/// Every segmentation of `surface` into prefix* stem suffix* licensed by the
/// grammar, ordered by preference (see choose_analysis). Matching is on the
/// ASCII-lowercased surface.
AnalyzerResponse analyze_word(std::string_view surface, const Grammar& grammar);

/// Preference order: fewest affixes, then stem, then POS (lexicographic),
/// then longest-match-first affix segmentation.
bool analysis_preferred(const Analysis& a, const Analysis& b);

/// The preferred analysis of an ok response.
const Analysis& choose_analysis(const AnalyzerResponse& response);

class AnalyzerUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Analyzer {
public:
    virtual ~Analyzer() = default;
    /// One response per input word. May throw AnalyzerUnavailable.
    virtual std::vector<AnalyzerResponse> analyze(std::span<const std::string> words) const = 0;
};

class ToyAnalyzer : public Analyzer {
public:
    explicit ToyAnalyzer(Grammar grammar) : grammar_(std::move(grammar)) {}
    std::vector<AnalyzerResponse> analyze(std::span<const std::string> words) const override;
    const Grammar& grammar() const { return grammar_; }

private:
    Grammar grammar_;
};

// REST analyzer contract (POST /analyze, JSON):
//   request:  {"words": ["ndakunda", ...]}
//   response: {"results": [{"word": "ndakunda", "status": "ok" | "unanalyzable",
//               "analyses": [{"stem": "kunda", "affixes": ["nda"], "pos": "V"}]}]}
// results[i] answers words[i].
inline constexpr const char* kAnalyzePath = "/analyze";

nlohmann::json analyzer_request_json(std::span<const std::string> words);
nlohmann::json analyzer_response_json(std::span<const std::string> words,
                                      std::span<const AnalyzerResponse> responses);
std::vector<AnalyzerResponse> parse_analyzer_response(const nlohmann::json& body,
                                                      std::size_t expected_count);

/// Client for a remote analyzer speaking the contract above.
class RestAnalyzerClient : public Analyzer {
public:
    RestAnalyzerClient(std::string host, int port,
                       std::chrono::milliseconds timeout = std::chrono::milliseconds(2000));
    std::vector<AnalyzerResponse> analyze(std::span<const std::string> words) const override;

private:
    std::string host_;
    int port_;
    std::chrono::milliseconds timeout_;
};

/// Serves `analyzer` under the REST contract until stop() is called.
class AnalyzerServer {
public:
    explicit AnalyzerServer(const Analyzer& analyzer);
    ~AnalyzerServer();
    AnalyzerServer(const AnalyzerServer&) = delete;
    AnalyzerServer& operator=(const AnalyzerServer&) = delete;

    /// Binds (port 0 picks a free port) and serves on a background thread.
    int start(const std::string& host, int port);
    /// Blocks serving on the calling thread.
    bool listen(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace morphlm::morpho
