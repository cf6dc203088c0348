#include "morphlm/morpho/analyzer.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "morphlm/morpho/utf8.hpp"

namespace morphlm::morpho {

Grammar Grammar::parse(std::string_view text) {
    Grammar g;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto parts = split_whitespace(line);
        if (parts.empty() || parts[0].starts_with('#')) {
            continue;
        }
        const std::string& kind = parts[0];
        if (kind == "STEM" && parts.size() == 3) {
            g.stems[ascii_lower(parts[1])].insert(parts[2]);
        } else if (kind == "PREFIX" && parts.size() == 2) {
            g.prefixes.insert(ascii_lower(parts[1]));
        } else if (kind == "SUFFIX" && parts.size() == 2) {
            g.suffixes.insert(ascii_lower(parts[1]));
        } else {
            throw std::invalid_argument("grammar line " + std::to_string(lineno) + ": cannot parse '" +
                                        line + "'");
        }
    }
    return g;
}

Grammar Grammar::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read grammar file " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string Grammar::to_text() const {
    std::string out;
    for (const auto& [stem, tags] : stems) {
        for (const auto& tag : tags) {
            out += "STEM " + stem + " " + tag + "\n";
        }
    }
    for (const auto& p : prefixes) {
        out += "PREFIX " + p + "\n";
    }
    for (const auto& s : suffixes) {
        out += "SUFFIX " + s + "\n";
    }
    return out;
}

namespace {

std::vector<std::string> by_length_desc(const std::set<std::string>& items) {
    std::vector<std::string> v(items.begin(), items.end());
    std::stable_sort(v.begin(), v.end(),
                     [](const std::string& a, const std::string& b) { return a.size() > b.size(); });
    return v;
}

// All ways to write `rest` as a suffix sequence, stripping from the right.
void suffix_chains(std::string_view rest, const std::vector<std::string>& suffixes,
                   std::vector<std::string>& chain, std::vector<std::vector<std::string>>& out) {
    if (rest.empty()) {
        out.emplace_back(chain.rbegin(), chain.rend());
        return;
    }
    for (const auto& s : suffixes) {
        if (rest.ends_with(s)) {
            chain.push_back(s);
            suffix_chains(rest.substr(0, rest.size() - s.size()), suffixes, chain, out);
            chain.pop_back();
        }
    }
}

struct Enumerator {
    const Grammar& grammar;
    std::string_view word;
    std::vector<std::string> prefixes;
    std::vector<std::string> suffixes;
    std::vector<Analysis> results;

    void from(std::size_t pos, std::vector<std::string>& prefix_chain) {
        for (std::size_t end = word.size(); end > pos; --end) {
            auto it = grammar.stems.find(std::string(word.substr(pos, end - pos)));
            if (it == grammar.stems.end()) {
                continue;
            }
            std::vector<std::vector<std::string>> chains;
            std::vector<std::string> scratch;
            suffix_chains(word.substr(end), suffixes, scratch, chains);
            for (const auto& suffix_chain : chains) {
                for (const auto& pos_tag : it->second) {
                    Analysis a{it->first, prefix_chain, pos_tag};
                    a.affixes.insert(a.affixes.end(), suffix_chain.begin(), suffix_chain.end());
                    results.push_back(std::move(a));
                }
            }
        }
        for (const auto& p : prefixes) {
            if (word.substr(pos).starts_with(p) && pos + p.size() < word.size()) {
                prefix_chain.push_back(p);
                from(pos + p.size(), prefix_chain);
                prefix_chain.pop_back();
            }
        }
    }
};

}  // namespace

bool analysis_preferred(const Analysis& a, const Analysis& b) {
    if (a.affixes.size() != b.affixes.size()) {
        return a.affixes.size() < b.affixes.size();
    }
    if (a.stem != b.stem) {
        return a.stem < b.stem;
    }
    if (a.pos != b.pos) {
        return a.pos < b.pos;
    }
    for (std::size_t i = 0; i < a.affixes.size(); ++i) {
        if (a.affixes[i].size() != b.affixes[i].size()) {
            return a.affixes[i].size() > b.affixes[i].size();
        }
    }
    return a.affixes < b.affixes;
}

AnalyzerResponse analyze_word(std::string_view surface, const Grammar& grammar) {
    const std::string lower = ascii_lower(surface);
    Enumerator e{grammar, lower, by_length_desc(grammar.prefixes), by_length_desc(grammar.suffixes), {}};
    std::vector<std::string> chain;
    e.from(0, chain);
    if (e.results.empty()) {
        return AnalyzerResponse::unanalyzable();
    }
    std::sort(e.results.begin(), e.results.end(), analysis_preferred);
    e.results.erase(std::unique(e.results.begin(), e.results.end()), e.results.end());
    return AnalyzerResponse{AnalyzerResponse::Status::ok, std::move(e.results)};
}

const Analysis& choose_analysis(const AnalyzerResponse& response) {
    if (!response.ok() || response.segments.empty()) {
        throw std::logic_error("choose_analysis on an unanalyzable response");
    }
    return *std::min_element(response.segments.begin(), response.segments.end(), analysis_preferred);
}

std::vector<AnalyzerResponse> ToyAnalyzer::analyze(std::span<const std::string> words) const {
    std::vector<AnalyzerResponse> out;
    out.reserve(words.size());
    for (const auto& w : words) {
        out.push_back(analyze_word(w, grammar_));
    }
    return out;
}

nlohmann::json analyzer_request_json(std::span<const std::string> words) {
    return {{"words", std::vector<std::string>(words.begin(), words.end())}};
}

nlohmann::json analyzer_response_json(std::span<const std::string> words,
                                      std::span<const AnalyzerResponse> responses) {
    nlohmann::json results = nlohmann::json::array();
    for (std::size_t i = 0; i < words.size(); ++i) {
        nlohmann::json analyses = nlohmann::json::array();
        for (const auto& a : responses[i].segments) {
            analyses.push_back({{"stem", a.stem}, {"affixes", a.affixes}, {"pos", a.pos}});
        }
        results.push_back({{"word", words[i]},
                           {"status", responses[i].ok() ? "ok" : "unanalyzable"},
                           {"analyses", std::move(analyses)}});
    }
    return {{"results", std::move(results)}};
}

std::vector<AnalyzerResponse> parse_analyzer_response(const nlohmann::json& body,
                                                      std::size_t expected_count) {
    const auto& results = body.at("results");
    if (!results.is_array() || results.size() != expected_count) {
        throw std::runtime_error("analyzer response: expected " + std::to_string(expected_count) +
                                 " results");
    }
    std::vector<AnalyzerResponse> out;
    for (const auto& r : results) {
        AnalyzerResponse resp;
        const auto status = r.at("status").get<std::string>();
        if (status == "ok") {
            resp.status = AnalyzerResponse::Status::ok;
            for (const auto& a : r.at("analyses")) {
                resp.segments.push_back(Analysis{a.at("stem").get<std::string>(),
                                                 a.at("affixes").get<std::vector<std::string>>(),
                                                 a.at("pos").get<std::string>()});
            }
            if (resp.segments.empty()) {
                throw std::runtime_error("analyzer response: ok status without analyses");
            }
        } else if (status != "unanalyzable") {
            throw std::runtime_error("analyzer response: unknown status " + status);
        }
        out.push_back(std::move(resp));
    }
    return out;
}

RestAnalyzerClient::RestAnalyzerClient(std::string host, int port, std::chrono::milliseconds timeout)
    : host_(std::move(host)), port_(port), timeout_(timeout) {}

std::vector<AnalyzerResponse> RestAnalyzerClient::analyze(std::span<const std::string> words) const {
    if (words.empty()) {
        return {};
    }
    httplib::Client client(host_, port_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    auto res = client.Post(kAnalyzePath, analyzer_request_json(words).dump(), "application/json");
    if (!res) {
        throw AnalyzerUnavailable("analyzer at " + host_ + ":" + std::to_string(port_) +
                                  " unreachable: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw AnalyzerUnavailable("analyzer returned HTTP " + std::to_string(res->status));
    }
    try {
        return parse_analyzer_response(nlohmann::json::parse(res->body), words.size());
    } catch (const nlohmann::json::exception& e) {
        throw AnalyzerUnavailable(std::string("analyzer returned malformed JSON: ") + e.what());
    }
}

struct AnalyzerServer::Impl {
    explicit Impl(const Analyzer& a) : analyzer(a) {}
    const Analyzer& analyzer;
    httplib::Server server;
    std::thread thread;
};

AnalyzerServer::AnalyzerServer(const Analyzer& analyzer)
    : impl_(std::make_unique<Impl>(analyzer)) {
    impl_->server.Post(kAnalyzePath, [this](const httplib::Request& req, httplib::Response& res) {
        try {
            const auto body = nlohmann::json::parse(req.body);
            const auto words = body.at("words").get<std::vector<std::string>>();
            const auto responses = impl_->analyzer.analyze(words);
            res.set_content(analyzer_response_json(words, responses).dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
        }
    });
}

AnalyzerServer::~AnalyzerServer() { stop(); }

int AnalyzerServer::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) {
        throw std::runtime_error("analyzer server: cannot bind " + host + ":" + std::to_string(port));
    }
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

bool AnalyzerServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

void AnalyzerServer::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable()) {
        impl_->thread.join();
    }
}

}  // namespace morphlm::morpho
