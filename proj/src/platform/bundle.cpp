#include "morphlm/platform/bundle.hpp"

#include <stdexcept>

namespace morphlm::platform {

namespace fs = std::filesystem;

void save_bundle(const fs::path& dir, const model::TwoTierModel& model, const morpho::BpeModel& bpe,
                 const morpho::VocabularySet& vocabs) {
    fs::create_directories(dir);
    model.save(dir / "model");
    bpe.save(dir / "bpe.txt");
    vocabs.save(dir / "vocab.json");
}

Bundle load_bundle(const fs::path& dir) {
    for (const auto& f : {dir / "model" / "model.cfg", dir / "model" / "model.ckpt", dir / "bpe.txt",
                          dir / "vocab.json"}) {
        if (!fs::exists(f)) throw std::runtime_error("bundle is missing " + f.string());
    }
    return Bundle{model::TwoTierModel::load(dir / "model"), morpho::BpeModel::load(dir / "bpe.txt"),
                  morpho::VocabularySet::load(dir / "vocab.json")};
}

morpho::Tokenizer make_tokenizer(const Bundle& bundle, std::shared_ptr<const morpho::Analyzer> analyzer,
                                 std::optional<morpho::EmojiTable> emoji) {
    morpho::Tokenizer t;
    t.analyzer = std::move(analyzer);
    t.bpe = bundle.bpe;
    t.vocabs = bundle.vocabs;
    t.emoji = std::move(emoji);
    return t;
}

}  // namespace morphlm::platform
