#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "rcpg/diffnet.hpp"
#include "rcpg/envs.hpp"

namespace rcpg {

/// Scratch space for building a network input without reallocating.
struct EncodeBuf {
    std::vector<double> dense;
    std::vector<int> active;
};

/**
How a domain feeds its networks.

The policy input is domain specific: the grid tasks use the planar coordinate
pair scaled into [0, 1], the tabular domains a one-hot state. Critics always
see a one-hot state; the adversary a one-hot (state, action) pair. The
adversary's output layer has one slot per possible successor; on the grids
that is the fixed five-slot move layout where boundary-clamped slots share a
cell, so a cell's probability pools every slot mapped onto it.
*/
class DomainCoding {
public:
    static DomainCoding tabular(int n_states, int n_actions) {
        DomainCoding c;
        c.kind_ = Kind::tabular;
        c.n_states_ = n_states;
        c.n_actions_ = n_actions;
        c.policy_in_ = n_states;
        c.critic_in_ = n_states;
        c.adv_in_ = n_states + n_actions;
        c.adv_out_ = n_states;
        c.full_support_.resize(n_states);
        c.identity_slots_.resize(n_states);
        for (int i = 0; i < n_states; ++i) {
            c.full_support_[i] = i;
            c.identity_slots_[i] = i;
        }
        return c;
    }

    static DomainCoding grid() {
        DomainCoding c;
        c.kind_ = Kind::grid;
        c.n_states_ = kGridStates;
        c.n_actions_ = kGridActions;
        c.policy_in_ = 2;
        c.critic_in_ = kGridStates;
        c.adv_in_ = kGridStates + kGridActions;
        c.adv_out_ = 5;
        c.grid_support_.resize(kGridStates);
        c.grid_slot_pos_.resize(kGridStates);
        for (int s = 0; s < kGridStates; ++s) {
            c.grid_support_[s] = grid_support(s);
            auto slots = grid_slot_cells(s);
            const auto& sup = c.grid_support_[s];
            for (int k = 0; k < 5; ++k) {
                auto it = std::lower_bound(sup.begin(), sup.end(), slots[k]);
                c.grid_slot_pos_[s][k] = static_cast<int>(it - sup.begin());
            }
        }
        return c;
    }

    int n_states() const { return n_states_; }
    int n_actions() const { return n_actions_; }
    int policy_in() const { return policy_in_; }
    int critic_in() const { return critic_in_; }
    int adversary_in() const { return adv_in_; }
    int adversary_out() const { return adv_out_; }

    NetInput policy_input(int s, EncodeBuf& buf) const {
        check_state(s);
        if (kind_ == Kind::grid) {
            buf.dense.assign({cell_x(s) / 4.0, cell_y(s) / 4.0});
            return NetInput::from_dense(buf.dense);
        }
        buf.active.assign({s});
        return NetInput::from_active(buf.active);
    }

    NetInput critic_input(int s, EncodeBuf& buf) const {
        check_state(s);
        buf.active.assign({s});
        return NetInput::from_active(buf.active);
    }

    NetInput adversary_input(int s, int a, EncodeBuf& buf) const {
        check_state(s);
        if (a < 0 || a >= n_actions_) throw std::out_of_range("DomainCoding: action out of range");
        buf.active.assign({s, n_states_ + a});
        return NetInput::from_active(buf.active);
    }

    /// Successors a learned transition row may place mass on, sorted.
    const std::vector<int>& successor_support(int s, int a) const {
        check_state(s);
        if (a < 0 || a >= n_actions_) throw std::out_of_range("DomainCoding: action out of range");
        return kind_ == Kind::grid ? grid_support_[s] : full_support_;
    }

    /// Position in successor_support that each adversary output slot lands on.
    std::span<const int> slot_positions(int s, int a) const {
        check_state(s);
        if (a < 0 || a >= n_actions_) throw std::out_of_range("DomainCoding: action out of range");
        if (kind_ == Kind::grid) return std::span<const int>(grid_slot_pos_[s].data(), 5);
        return std::span<const int>(identity_slots_);
    }

    SupportTable support_table() const {
        SupportTable t(static_cast<std::size_t>(n_states_) * n_actions_);
        for (int s = 0; s < n_states_; ++s)
            for (int a = 0; a < n_actions_; ++a)
                t[static_cast<std::size_t>(s) * n_actions_ + a] = successor_support(s, a);
        return t;
    }

private:
    enum class Kind { tabular, grid };

    void check_state(int s) const {
        if (s < 0 || s >= n_states_) throw std::out_of_range("DomainCoding: state out of range");
    }

    Kind kind_ = Kind::tabular;
    int n_states_ = 0;
    int n_actions_ = 0;
    int policy_in_ = 0;
    int critic_in_ = 0;
    int adv_in_ = 0;
    int adv_out_ = 0;
    std::vector<int> full_support_;
    std::vector<int> identity_slots_;
    std::vector<std::vector<int>> grid_support_;
    std::vector<std::array<int, 5>> grid_slot_pos_;
};

}  // namespace rcpg
