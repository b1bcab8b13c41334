#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "test_util.hpp"

namespace {

int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " \"" PRUNELAB_CLI_PATH "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string write_config(const std::string& name, const std::string& text) {
    const auto dir = testutil::scratch_dir("cli_" + name);
    std::ofstream(dir / "run.cfg") << text;
    return (dir / "run.cfg").string();
}

}  // namespace

TEST(Cli, HelpExitsZero) {
    EXPECT_EQ(run("--help"), 0);
    EXPECT_EQ(run("sweep --help"), 0);
}

TEST(Cli, MissingSubcommandIsConfigError) { EXPECT_EQ(run(""), 2); }

TEST(Cli, UnknownFlagIsConfigError) { EXPECT_EQ(run("pretrain --bogus"), 2); }

TEST(Cli, UnknownConfigKeyIsConfigError) {
    EXPECT_EQ(run("gen-tasks --config " + write_config("unknown", "nope=1\n")), 2);
}

TEST(Cli, MissingConfigFileIsConfigError) { EXPECT_EQ(run("gen-tasks --config /nonexistent/run.cfg"), 2); }

TEST(Cli, BadLogLevelIsConfigError) { EXPECT_EQ(run("gen-tasks --out /tmp/x", "PRUNELAB_LOG=loud"), 2); }

TEST(Cli, MissingTasksIsRunError) {
    const auto out = testutil::scratch_dir("cli_no_tasks");
    EXPECT_EQ(run("pretrain --out " + out.string()), 1);
}

TEST(Cli, GenTasksWritesFiles) {
    const auto out = testutil::scratch_dir("cli_gen");
    const std::string cfg = write_config("gen", "task_train_size=64\ntask_eval_size=16\n");
    EXPECT_EQ(run("gen-tasks --config " + cfg + " --seed 3 --out " + out.string(), "PRUNELAB_LOG=error"), 0);
    EXPECT_TRUE(std::filesystem::exists(out / "tasks" / "target_eval.csv"));
}
