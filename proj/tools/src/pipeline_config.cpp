#include "pipeline_config.hpp"

#include <charconv>

namespace slicefinder::cli {

namespace fs = std::filesystem;

void PipelineConfig::validate() const {
  if (workers < 1) throw Error(ErrorCode::InvalidArgument, "workers must be >= 1");
  match.validate();
  if (tilt) tilt->validate();
  if (z_range && (z_range->first < 0 || z_range->first > z_range->second))
    throw Error(ErrorCode::InvalidArgument, "z range must satisfy 0 <= a <= b");
  for (const fs::path *p :
       {&exp_volume, &template_volume, &expert_pairs, &exp_labels, &template_labels}) {
    if (!p->empty() && !fs::exists(*p)) throw Error(ErrorCode::MissingFile, p->string());
  }
}

ZRange parse_z_range(const std::string &text) {
  const auto colon = text.find(':');
  auto number = [&](std::string_view s) {
    int v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size() || s.empty())
      throw Error(ErrorCode::InvalidArgument, "z range '" + text + "' is not 'a:b'");
    return v;
  };
  if (colon == std::string::npos)
    throw Error(ErrorCode::InvalidArgument, "z range '" + text + "' is not 'a:b'");
  const std::string_view all(text);
  const ZRange r{number(all.substr(0, colon)), number(all.substr(colon + 1))};
  if (r.first < 0 || r.first > r.second)
    throw Error(ErrorCode::InvalidArgument, "z range must satisfy 0 <= a <= b");
  return r;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::SingularTransform:
    case ErrorCode::DegenerateConfiguration:
    case ErrorCode::ZeroVariance:
    case ErrorCode::ExcessiveDeformation:
    case ErrorCode::AllPairsFailed:
    case ErrorCode::AllUndefined:
    case ErrorCode::EmptyCartography:
    case ErrorCode::IoError:
      return kExitRuntime;
    default:
      return kExitUsage;
  }
}

}  // namespace slicefinder::cli
