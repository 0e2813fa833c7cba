#include "panoseg/train.hpp"
#include "panoseg/run_config.hpp"
#include "panoseg/sample_io.hpp"
#include "panoseg/panoptic_io.hpp"
int main() {
    panoseg::RunConfig cfg;
    panoseg::Model<float> model(cfg.model, 1);
    auto out = model.forward(panoseg::Tensor<float>::zeros({3, 64, 64}));
    return out.stages.size() == 3 ? 0 : 1;
}
