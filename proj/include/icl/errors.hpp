// Copyright 2026 The ICL Engine Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace icl {

enum class ErrorKind {
  ZeroNorm,
  ShapeMismatch,
  HeadDivisibility,
  NoForwardPass,
  NonFiniteValue,
  FrozenTask,
  ConflictingTask,
  OutOfOrderTask,
  UnknownClass,
  EmptyCandidates,
  EmptyBatch,
  EmptyStore,
  IoError,
  FormatError,
  InvalidPartition,
  IncompleteRow,
  ConfigError,
  ClientFailure,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the engine; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Transport-level reason behind a ClientFailure.
enum class ClientFailureReason { Timeout, TransportError, TranscriptExhausted, BadResponse };

class ClientFailure : public Error {
 public:
  ClientFailure(ClientFailureReason reason, const std::string& what)
      : Error(ErrorKind::ClientFailure, what), reason_(reason) {}

  ClientFailureReason reason() const noexcept { return reason_; }

 private:
  ClientFailureReason reason_;
};

}  // namespace icl
