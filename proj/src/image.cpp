#include "gsem/image.hpp"

#include <algorithm>
#include <limits>
#include <vector>

#include "gsem/error.hpp"

namespace gsem {

Mask labeled_mask(const LabelMap& labels) {
    Mask mask(labels.height, labels.width, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) mask.data[i] = labels.data[i] != 0 ? 1 : 0;
    return mask;
}

std::size_t count(const Mask& mask) {
    return static_cast<std::size_t>(std::count_if(mask.data.begin(), mask.data.end(), [](auto v) { return v != 0; }));
}

LabelMap connected_regions(const LabelMap& labels) {
    LabelMap out(labels.height, labels.width, 0);
    std::uint32_t next = 1;
    std::vector<std::size_t> stack;
    for (int r = 0; r < labels.height; ++r) {
        for (int c = 0; c < labels.width; ++c) {
            const auto lab = labels(r, c);
            if (lab == 0 || out(r, c) != 0) continue;
            if (next > std::numeric_limits<std::uint16_t>::max()) {
                throw ShapeError("connected_regions: more than 65535 regions");
            }
            const auto id = static_cast<std::uint16_t>(next++);
            out(r, c) = id;
            stack.assign(1, labels.index(r, c));
            while (!stack.empty()) {
                const auto p = stack.back();
                stack.pop_back();
                const int pr = static_cast<int>(p / labels.width);
                const int pc = static_cast<int>(p % labels.width);
                const int nbr[4][2] = {{pr - 1, pc}, {pr + 1, pc}, {pr, pc - 1}, {pr, pc + 1}};
                for (const auto& n : nbr) {
                    if (n[0] < 0 || n[0] >= labels.height || n[1] < 0 || n[1] >= labels.width) continue;
                    if (labels(n[0], n[1]) != lab || out(n[0], n[1]) != 0) continue;
                    out(n[0], n[1]) = id;
                    stack.push_back(labels.index(n[0], n[1]));
                }
            }
        }
    }
    return out;
}

}  // namespace gsem
