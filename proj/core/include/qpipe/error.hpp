// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace qpipe {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration or argument violates a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace qpipe
