// Copyright 2026 The safepilco Authors
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

#include "safepilco/errors.hpp"

namespace safepilco {

namespace {

template <typename T>
void rethrow_as(const Error& e, const std::string& msg) {
  if (dynamic_cast<const T*>(&e) != nullptr) throw T(msg);
}

}  // namespace

void rethrow_with_context(const Error& e, const std::string& context) {
  const std::string msg = context + ": " + e.what();
  rethrow_as<DimensionMismatch>(e, msg);
  rethrow_as<CholeskyFailure>(e, msg);
  rethrow_as<SingularInput>(e, msg);
  rethrow_as<NonPSD>(e, msg);
  rethrow_as<NonFinite>(e, msg);
  rethrow_as<InvalidArgument>(e, msg);
  rethrow_as<DegenerateSamples>(e, msg);
  rethrow_as<FormatError>(e, msg);
  rethrow_as<VersionError>(e, msg);
  rethrow_as<IOError>(e, msg);
  throw Error(msg);
}

}  // namespace safepilco
