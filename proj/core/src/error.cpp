#include "dialingle/error.hpp"

namespace dialingle {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedRecord: return "malformed_record";
    case ErrorCode::UnknownLabel: return "unknown_label";
    case ErrorCode::DuplicateGroup: return "duplicate_group";
    case ErrorCode::UnknownGroup: return "unknown_group";
    case ErrorCode::EmptyText: return "empty_text";
    case ErrorCode::UnknownSession: return "unknown_session";
    case ErrorCode::InvalidPayload: return "invalid_payload";
    case ErrorCode::UnknownFamily: return "unknown_family";
    case ErrorCode::DuplicateFamily: return "duplicate_family";
    case ErrorCode::DegeneratePolygon: return "degenerate_polygon";
    case ErrorCode::OutOfBounds: return "out_of_bounds";
    case ErrorCode::ConflictingEdit: return "conflicting_edit";
    case ErrorCode::UnknownDivision: return "unknown_division";
    case ErrorCode::SingleClassCorpus: return "single_class_corpus";
    case ErrorCode::EmptyTrainingSet: return "empty_training_set";
    case ErrorCode::EmptyTestSet: return "empty_test_set";
    case ErrorCode::NoFeasibleModel: return "no_feasible_model";
    case ErrorCode::InvalidConfig: return "invalid_config";
    case ErrorCode::InvalidModelFile: return "invalid_model_file";
    case ErrorCode::NotNormalized: return "not_normalized";
    case ErrorCode::EmptyInput: return "empty_input";
    case ErrorCode::NoGroups: return "no_groups";
    case ErrorCode::ModelLabelMismatch: return "model_label_mismatch";
    case ErrorCode::TurnAlreadyOpen: return "turn_already_open";
    case ErrorCode::NoOpenTurn: return "no_open_turn";
    case ErrorCode::WrongStage: return "wrong_stage";
    case ErrorCode::DuplicateDialectName: return "duplicate_dialect_name";
    case ErrorCode::InsufficientData: return "insufficient_data";
    case ErrorCode::AlreadyAnswered: return "already_answered";
    case ErrorCode::RetrainInProgress: return "retrain_in_progress";
    case ErrorCode::UnknownJob: return "unknown_job";
    case ErrorCode::BadRequest: return "bad_request";
    case ErrorCode::Io: return "io";
    case ErrorCode::Internal: return "internal";
  }
  return "internal";
}

int http_status(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnknownLabel:
    case ErrorCode::UnknownGroup:
    case ErrorCode::UnknownSession:
    case ErrorCode::UnknownFamily:
    case ErrorCode::UnknownDivision:
    case ErrorCode::UnknownJob:
      return 404;
    case ErrorCode::TurnAlreadyOpen:
    case ErrorCode::NoOpenTurn:
    case ErrorCode::WrongStage:
    case ErrorCode::AlreadyAnswered:
    case ErrorCode::RetrainInProgress:
    case ErrorCode::NoGroups:
    case ErrorCode::InsufficientData:
    case ErrorCode::ModelLabelMismatch:
    case ErrorCode::DuplicateGroup:
    case ErrorCode::DuplicateFamily:
      return 409;
    case ErrorCode::Io:
    case ErrorCode::Internal:
      return 500;
    default:
      return 400;
  }
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace dialingle
