#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "stvfm/error.hpp"
#include "stvfm/tensor.hpp"

// Named parameter registry. Float master values live here in insertion
// order (the order parameters were registered), which fixes both the
// initialization draw order and the optimizer update order. A Binder lends
// the values to a tape as leaves, widening to double for gradient checking;
// each name binds to exactly one leaf per tape so shared parameters
// accumulate their gradients on a single node.

namespace stvfm {

struct ParamEntry {
    std::string name;
    Shape shape;
    std::vector<float> data;
    bool frozen = false;
    std::string group;  // tokenizer, temporal_encoder, adapters, prompts, decoder, heads, backbone
};

class ParamStore {
public:
    ParamEntry& add(std::string name, Shape shape, std::vector<float> data, bool frozen, std::string group) {
        if (index_.count(name)) fail(ErrorCode::Invalid, "parameter '" + name + "' registered twice");
        if (data.size() != numel(shape))
            fail(ErrorCode::ShapeMismatch, "parameter '" + name + "' data does not match shape " + shape_str(shape));
        index_.emplace(name, entries_.size());
        entries_.push_back(ParamEntry{std::move(name), std::move(shape), std::move(data), frozen, std::move(group)});
        return entries_.back();
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    ParamEntry& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) fail(ErrorCode::Invalid, "unknown parameter '" + name + "'");
        return entries_[it->second];
    }
    const ParamEntry& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) fail(ErrorCode::Invalid, "unknown parameter '" + name + "'");
        return entries_[it->second];
    }

    std::vector<ParamEntry>& entries() { return entries_; }
    const std::vector<ParamEntry>& entries() const { return entries_; }

private:
    std::vector<ParamEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <class T>
class Binder {
public:
    Binder(const ParamStore& store, Tape<T>& tape) : store_(&store), tape_(&tape) {}

    Tensor<T> operator()(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        const ParamEntry& e = store_->at(name);
        std::vector<T> widened(e.data.begin(), e.data.end());
        Tensor<T> t = tape_->leaf(e.shape, std::move(widened), !e.frozen);
        bound_.emplace(name, t);
        return t;
    }

    // leaf for a bound name, or nullptr if this forward never touched it
    const Tensor<T>* find(const std::string& name) const {
        auto it = bound_.find(name);
        return it == bound_.end() ? nullptr : &it->second;
    }

    Tape<T>& tape() { return *tape_; }

private:
    const ParamStore* store_;
    Tape<T>* tape_;
    std::unordered_map<std::string, Tensor<T>> bound_;
};

} // namespace stvfm
