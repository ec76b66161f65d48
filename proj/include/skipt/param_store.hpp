#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "skipt/array.hpp"

namespace skipt {

// Named parameter storage with a per-name trainable flag. Names are
// hierarchical ("vision.layer.7.attn.wq"); the map is ordered so every
// iteration (init, checkpointing, SGD) is deterministic.
class ParamStore {
public:
    struct Entry {
        Array value;
        bool trainable = true;
    };

    void add(const std::string& name, Array value, bool trainable = true) {
        auto [it, inserted] = entries_.try_emplace(name, Entry{std::move(value), trainable});
        if (!inserted) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    const Array& get(const std::string& name) const { return find(name).value; }
    Array& mutable_get(const std::string& name) { return find(name).value; }

    bool trainable(const std::string& name) const { return find(name).trainable; }
    void set_trainable(const std::string& name, bool t) { find(name).trainable = t; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [k, _] : entries_) out.push_back(k);
        return out;
    }

    std::vector<std::string> trainable_names() const {
        std::vector<std::string> out;
        for (const auto& [k, e] : entries_)
            if (e.trainable) out.push_back(k);
        return out;
    }

    std::size_t size() const { return entries_.size(); }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& [_, e] : entries_) n += e.value.size();
        return n;
    }

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    const Entry& find(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::out_of_range("ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }
    Entry& find(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::out_of_range("ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }

    std::map<std::string, Entry> entries_;
};

}  // namespace skipt
