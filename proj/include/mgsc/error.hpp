// Copyright 2026 The MGSC Authors. All Rights Reserved.
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

namespace mgsc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument violated a documented precondition (ranges, stochasticity...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Tensor dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A pooled representation collapsed to (near) zero norm.
class DegenerateRepresentationError : public Error {
 public:
  using Error::Error;
};

/// The label sequence needs more frames than the input provides.
class InfeasibleAlignmentError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// File could not be read, written or parsed.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mgsc
