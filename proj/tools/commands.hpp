#pragma once

#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"

namespace tuneout::cli {

struct Globals {
    std::string species;
    std::string output;  // JSONL, stdout when empty
    std::string csv;
    int jobs = 1;
};

struct Command {
    CLI::App* app = nullptr;
    std::function<void()> run;
};

std::vector<Command> add_commands(CLI::App& app, Globals& globals);

}  // namespace tuneout::cli
