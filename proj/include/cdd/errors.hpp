/* Copyright 2026 The CDD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef CDD_ERRORS_HPP
#define CDD_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace cdd {

// Invalid configuration or incompatible checkpoint.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Missing, malformed or unreadable dataset files.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A loss term became NaN or infinite.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cdd

#endif  // CDD_ERRORS_HPP
