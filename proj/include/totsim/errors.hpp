#pragma once

#include <stdexcept>
#include <string>

namespace totsim {

/** Error categories raised across the library. */
enum class Errc {
  UnknownParent,
  ParentPruned,
  NotSpeculative,
  UnknownNode,
  IllegalTransition,
  ZeroVisits,
  NoChildren,
  EmptyRewards,
  SearchComplete,
  NothingExpandable,
  UnknownSpeculation,
  NegativeWeight,
  EmptyTally,
  EmptyBatch,
  ConfigInvalid,
  IncompleteLog,
  IoFailure,
  InvalidArgument,
};

const char* errc_name(Errc c);

/** Single exception type carrying a category code; tests match on code(). */
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::UnknownParent: return "UnknownParent";
    case Errc::ParentPruned: return "ParentPruned";
    case Errc::NotSpeculative: return "NotSpeculative";
    case Errc::UnknownNode: return "UnknownNode";
    case Errc::IllegalTransition: return "IllegalTransition";
    case Errc::ZeroVisits: return "ZeroVisits";
    case Errc::NoChildren: return "NoChildren";
    case Errc::EmptyRewards: return "EmptyRewards";
    case Errc::SearchComplete: return "SearchComplete";
    case Errc::NothingExpandable: return "NothingExpandable";
    case Errc::UnknownSpeculation: return "UnknownSpeculation";
    case Errc::NegativeWeight: return "NegativeWeight";
    case Errc::EmptyTally: return "EmptyTally";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::IncompleteLog: return "IncompleteLog";
    case Errc::IoFailure: return "IoFailure";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace totsim
