// Adam over the parameter blocks of one or more models.
#pragma once

#include <vector>

#include "mesen/nets.hpp"

namespace mesen {

class Adam {
public:
    explicit Adam(std::vector<Layer*> layers, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);

    // one update from the gradients currently held in the blocks
    void step();

    long step_count() const { return t_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    std::vector<Layer*> layers_;
    std::vector<Moments> moments_;  // one per layer block, flattened
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

}  // namespace mesen
