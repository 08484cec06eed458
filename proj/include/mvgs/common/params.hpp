#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvgs/common/rng.hpp"
#include "mvgs/diff/tape.hpp"

namespace mvgs {

// Named parameter arrays plus their optimizer moments. Iteration follows
// insertion order, which keeps updates and serialization deterministic.
class ParamStore {
public:
    diff::NDArray& create(const std::string& name, diff::Shape shape) {
        if (map_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
        order_.push_back(name);
        Entry e;
        e.value = diff::NDArray(shape);
        e.m1 = diff::NDArray(shape);
        e.m2 = diff::NDArray(std::move(shape));
        return map_.emplace(name, std::move(e)).first->second.value;
    }

    bool has(const std::string& name) const { return map_.count(name) != 0; }

    diff::NDArray& get(const std::string& name) {
        auto it = map_.find(name);
        if (it == map_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
        return it->second.value;
    }
    const diff::NDArray& get(const std::string& name) const {
        return const_cast<ParamStore*>(this)->get(name);
    }

    diff::NDArray& moment1(const std::string& name) { return map_.at(name).m1; }
    diff::NDArray& moment2(const std::string& name) { return map_.at(name).m2; }

    const std::vector<std::string>& names() const { return order_; }

    int64_t total_size() const {
        int64_t n = 0;
        for (const auto& name : order_) n += map_.at(name).value.size();
        return n;
    }

private:
    struct Entry {
        diff::NDArray value, m1, m2;
    };
    std::vector<std::string> order_;
    std::unordered_map<std::string, Entry> map_;
};

// Per-tape view of a store: parameters become leaves on first use, so the
// optimizer can read gradients off the bound list after backward.
class Binder {
public:
    Binder(diff::Tape& tape, ParamStore& store, bool trainable = true)
        : tape_(&tape), store_(&store), trainable_(trainable) {}

    diff::Value operator[](const std::string& name) {
        auto ov = overrides_.find(name);
        if (ov != overrides_.end()) return ov->second;
        auto it = index_.find(name);
        if (it != index_.end()) return bound_[it->second].second;
        diff::Value v = tape_->leaf(store_->get(name), trainable_);
        index_.emplace(name, bound_.size());
        bound_.emplace_back(name, v);
        return v;
    }

    // Routes one name to an externally supplied Value (gradient-check probes).
    void substitute(const std::string& name, diff::Value v) { overrides_[name] = std::move(v); }

    const std::vector<std::pair<std::string, diff::Value>>& bound() const { return bound_; }
    diff::Tape& tape() const { return *tape_; }
    ParamStore& store() const { return *store_; }

private:
    diff::Tape* tape_;
    ParamStore* store_;
    bool trainable_;
    std::unordered_map<std::string, size_t> index_;
    std::unordered_map<std::string, diff::Value> overrides_;
    std::vector<std::pair<std::string, diff::Value>> bound_;
};

inline void fill_normal(diff::NDArray& a, Rng& rng, double stddev) {
    for (auto& x : a.data) x = stddev * rng.normal();
}

inline void fill_uniform(diff::NDArray& a, Rng& rng, double lo, double hi) {
    for (auto& x : a.data) x = rng.uniform(lo, hi);
}

}  // namespace mvgs
