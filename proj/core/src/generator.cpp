#include "stgen/generator.hpp"

#include <cmath>

#include "stgen/numeric.hpp"
#include "stgen/tokens.hpp"

namespace stgen {

std::vector<int> Generator::encode(const MeaningRepresentation& mr, std::span<const std::string> text) const {
  std::vector<int> ids = encode_prefix(mr);
  const Vocab& v = vocab();
  for (const auto& tok : text) ids.push_back(v.id(tok));
  ids.push_back(Vocab::kEos);
  return ids;
}

std::vector<int> Generator::encode_prefix(const MeaningRepresentation& mr) const {
  const Vocab& v = vocab();
  std::vector<int> ids;
  ids.push_back(Vocab::kBos);
  for (const auto& tok : tokenize(render_mr(mr))) ids.push_back(v.id(tok));
  ids.push_back(Vocab::kSep);
  return ids;
}

LogLikelihood Generator::log_likelihood(const DropoutMask& mask, const LabeledPair& pair) const {
  const std::vector<int> ids = encode(pair.mr, pair.text);
  const std::size_t sep_index = ids.size() - pair.text.size() - 2;  // position of SEP
  auto stream = make_stream(mask);
  stream->reset(std::span<const int>(ids.data(), 1));
  LogLikelihood ll;
  for (std::size_t j = 1; j < ids.size(); ++j) {
    if (j - 1 >= sep_index) {
      const StepOutput& out = stream->output();
      // log softmax straight from logits; never exponentiates below log space
      const double logp = out.hidden[static_cast<std::size_t>(ids[j])] - log_sum_exp(out.hidden);
      ll.per_token.push_back(logp);
      ll.total += logp;
    }
    if (j + 1 < ids.size()) stream->feed(ids[j]);
  }
  return ll;
}

StepOutput Generator::forward_step(const DropoutMask& mask, std::span<const int> prefix) const {
  auto stream = make_stream(mask);
  stream->reset(prefix);
  return stream->output();
}

}  // namespace stgen
