#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dialingle {

/// Every failure the library reports. The machine names (see error_name)
/// are what the HTTP layer puts in the "code" field.
enum class ErrorCode {
  // corpus store
  MalformedRecord,
  UnknownLabel,
  DuplicateGroup,
  UnknownGroup,
  EmptyText,
  UnknownSession,
  InvalidPayload,
  UnknownFamily,
  DuplicateFamily,
  // geometry
  DegeneratePolygon,
  OutOfBounds,
  ConflictingEdit,
  UnknownDivision,
  // classifier
  SingleClassCorpus,
  EmptyTrainingSet,
  EmptyTestSet,
  NoFeasibleModel,
  InvalidConfig,
  InvalidModelFile,
  // active selection
  NotNormalized,
  EmptyInput,
  NoGroups,
  ModelLabelMismatch,
  // game engine
  TurnAlreadyOpen,
  NoOpenTurn,
  WrongStage,
  DuplicateDialectName,
  InsufficientData,
  AlreadyAnswered,
  // service
  RetrainInProgress,
  UnknownJob,
  BadRequest,
  Io,
  Internal,
};

std::string_view error_name(ErrorCode code) noexcept;

/// HTTP status used by the api layer for this code.
int http_status(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace dialingle
