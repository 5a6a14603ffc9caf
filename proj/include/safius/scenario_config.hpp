/*
   Copyright 2026 The SAFIUS Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/


#pragma once

#include <string>

#include "safius/harness.hpp"

namespace safius {

// Line-oriented scenario files. Errors are Error(Errc::Config) naming the line.
Scenario parse_scenario(const std::string& text);
Scenario load_scenario(const std::string& path);

// A file holding only "fault @N ..." lines.
FaultPlan parse_fault_plan(const std::string& text);
FaultPlan load_fault_plan(const std::string& path);

std::optional<Errc> parse_errc(const std::string& name);

}  // namespace safius
