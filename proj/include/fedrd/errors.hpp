// Copyright 2026 The fedrd Authors. All Rights Reserved.
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
// =============================================================================

#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace fedrd {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Vector or matrix dimensions that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Covariance with an eigenvalue below the PSD tolerance.
class NotPsdError : public Error {
 public:
  using Error::Error;
};

// Problem too large for exhaustive enumeration.
class SizeError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition (e.g. an infeasible start point).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Malformed configuration or input document.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An iterative solver failed to converge. Carries the last iterate.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, Eigen::VectorXd last_iterate)
      : Error(what), last_iterate_(std::move(last_iterate)) {}

  const Eigen::VectorXd& last_iterate() const { return last_iterate_; }

 private:
  Eigen::VectorXd last_iterate_;
};

}  // namespace fedrd
