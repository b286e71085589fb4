#include <doctest.h>

#include "scalp/config.hpp"

using namespace scalp;

TEST_CASE("config text round-trips") {
    RunConfig c;
    apply_config_text(c, "# sweep\nlambda = 0.7\n\ntau=0.25   # inline\nchannels = 4,8\ncam = gradcam\nlambdas = 0.9,0.8\n");
    CHECK(c.loss.lambda == 0.7);
    CHECK(c.loss.tau == 0.25);
    CHECK(c.encoder.channels == std::vector<std::size_t>{4, 8});
    CHECK(c.cam == CamMethod::gradcam);
    CHECK(c.grid.lambdas == std::vector<double>{0.9, 0.8});

    RunConfig back;
    apply_config_text(back, c.to_text());
    CHECK(back.to_text() == c.to_text());
    CHECK(back.loss.lambda == c.loss.lambda);
}

TEST_CASE("later values win") {
    RunConfig c;
    apply_config_text(c, "epochs = 5\n");
    c.set("epochs", "9");
    CHECK(c.optimizer.epochs == 9);
    c.set("out", "run/x");
    CHECK(c.checkpoint_path() == "run/x/checkpoint.bin");
    c.set("checkpoint", "elsewhere.bin");
    CHECK(c.checkpoint_path() == "elsewhere.bin");
}

TEST_CASE("config errors") {
    RunConfig c;
    CHECK_THROWS_AS(c.set("lamda", "0.5"), ConfigError);
    CHECK_THROWS_AS(c.set("epochs", "ten"), ConfigError);
    CHECK_THROWS_AS(c.set("epochs", "-3"), ConfigError);
    CHECK_THROWS_AS(c.set("cam", "gradcam+"), ConfigError);
    CHECK_THROWS_WITH_AS(apply_config_text(c, "seed = 1\nnot a pair\n"), doctest::Contains("line 2"), ConfigError);
    CHECK_THROWS_AS(apply_config_file(c, "/nonexistent/config.txt"), ConfigError);

    RunConfig range;
    range.set("lambda", "1.5");
    CHECK_THROWS_AS(range.validate(), ConfigError);
    RunConfig side;
    side.set("side", "60");
    CHECK_THROWS_AS(side.validate(), ConfigError);
    RunConfig fine;
    CHECK_NOTHROW(fine.validate());
}
