#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "tardis/error.hpp"
#include "tardis/io.hpp"

namespace tardis {

enum class template_id {
    class_description,
    contextualizing_text,
    seg_generate,
    discriminative_text,
    ceg_generate,
    verification,
    modification,
};

inline constexpr std::array<template_id, 7> kAllTemplateIds = {
    template_id::class_description, template_id::contextualizing_text, template_id::seg_generate,
    template_id::discriminative_text, template_id::ceg_generate, template_id::verification,
    template_id::modification,
};

inline const char* template_id_name(template_id id) {
    switch (id) {
        case template_id::class_description:   return "class_description";
        case template_id::contextualizing_text: return "contextualizing_text";
        case template_id::seg_generate:        return "seg_generate";
        case template_id::discriminative_text: return "discriminative_text";
        case template_id::ceg_generate:        return "ceg_generate";
        case template_id::verification:        return "verification";
        case template_id::modification:        return "modification";
    }
    return "?";
}

// Placeholder vocabulary per template id. "domain" is allowed everywhere so
// the generic template set can defer its subject area to run time.
inline const std::set<std::string>& declared_placeholders(template_id id) {
    static const std::map<template_id, std::set<std::string>> table = {
        {template_id::class_description, {"target_class_name", "target_seed_data", "domain"}},
        {template_id::contextualizing_text,
         {"data", "class_description", "target_seed_example", "domain"}},
        {template_id::seg_generate,
         {"target_class", "target_seed_example", "contextualizing_text", "domain"}},
        {template_id::discriminative_text,
         {"target_class_name", "target_seed_data", "ambiguous_class_name", "ambiguous_seed_data",
          "domain"}},
        {template_id::ceg_generate,
         {"target_class_name", "target_seed_data", "ambiguous_class_name", "ambiguous_seed_data",
          "discriminative_text", "domain"}},
        {template_id::verification, {"shots", "target_text"}},
        {template_id::modification,
         {"target_class", "target_class_data", "discriminative_text", "verification_result_class",
          "generated_example"}},
    };
    return table.at(id);
}

struct PromptTemplate {
    template_id id{};
    std::string domain;
    std::string body;

    // Placeholder names appearing in the body, in order of first appearance.
    std::vector<std::string> placeholders() const {
        std::vector<std::string> out;
        std::set<std::string> seen;
        size_t pos = 0;
        while ((pos = body.find('{', pos)) != std::string::npos) {
            size_t end = body.find('}', pos);
            if (end == std::string::npos) break;
            std::string name = body.substr(pos + 1, end - pos - 1);
            if (!name.empty() && seen.insert(name).second) out.push_back(name);
            pos = end + 1;
        }
        return out;
    }

    bool uses(const std::string& placeholder) const {
        return body.find("{" + placeholder + "}") != std::string::npos;
    }
};

using BindingValue = std::variant<std::string, std::vector<std::string>>;
using Bindings = std::map<std::string, BindingValue>;

namespace detail {

// Example lists render one per line with a "- " prefix, starting on a fresh
// line; pinned by the golden-file tests.
inline std::string render_binding(const BindingValue& value) {
    if (std::holds_alternative<std::string>(value)) return std::get<std::string>(value);
    const auto& items = std::get<std::vector<std::string>>(value);
    std::string out;
    for (const auto& item : items) {
        out += "\n- ";
        out += item;
    }
    return out;
}

} // namespace detail

/// Exact substitution of every {placeholder} in the body; no escaping, no
/// trimming. Missing bindings are an error naming the placeholder; bindings
/// that match no placeholder only warn.
inline std::string render(const PromptTemplate& t, const Bindings& bindings,
                          const warning_sink& warnings = stderr_warnings()) {
    auto used = t.placeholders();
    std::set<std::string> used_set(used.begin(), used.end());
    for (const auto& name : used) {
        auto it = bindings.find(name);
        if (it == bindings.end())
            fail(errc::precondition, "render(" + std::string(template_id_name(t.id)) +
                                         "): missing binding for placeholder '" + name + "'");
        bool empty = std::holds_alternative<std::string>(it->second)
                         ? std::get<std::string>(it->second).empty()
                         : std::get<std::vector<std::string>>(it->second).empty();
        if (empty)
            fail(errc::precondition, "render(" + std::string(template_id_name(t.id)) +
                                         "): empty binding for placeholder '" + name + "'");
    }
    for (const auto& [name, _] : bindings)
        if (!used_set.count(name))
            warn(warnings, "render(" + std::string(template_id_name(t.id)) +
                               "): binding '" + name + "' matches no placeholder");

    std::string out;
    out.reserve(t.body.size());
    size_t pos = 0;
    while (pos < t.body.size()) {
        size_t open = t.body.find('{', pos);
        if (open == std::string::npos) {
            out.append(t.body, pos, std::string::npos);
            break;
        }
        size_t close = t.body.find('}', open);
        if (close == std::string::npos) {
            out.append(t.body, pos, std::string::npos);
            break;
        }
        out.append(t.body, pos, open - pos);
        std::string name = t.body.substr(open + 1, close - open - 1);
        out += detail::render_binding(bindings.at(name));
        pos = close + 1;
    }
    return out;
}

struct TemplateSet {
    std::string domain;
    std::map<template_id, PromptTemplate> templates;

    const PromptTemplate& get(template_id id) const {
        auto it = templates.find(id);
        if (it == templates.end())
            fail(errc::config, "template set '" + domain + "' is missing " + template_id_name(id));
        return it->second;
    }

    bool complete() const { return templates.size() == kAllTemplateIds.size(); }
};

/// Loads templates/<domain>/<id>.txt. One trailing newline is stripped from
/// each file so POSIX-style text files render to clean prompts; everything
/// else is the body byte-for-byte. Bodies are validated against the
/// declared placeholder vocabulary.
inline TemplateSet load_template_set(const std::filesystem::path& root, const std::string& domain) {
    TemplateSet set;
    set.domain = domain;
    for (template_id id : kAllTemplateIds) {
        std::filesystem::path file = root / domain / (std::string(template_id_name(id)) + ".txt");
        if (!std::filesystem::exists(file))
            fail(errc::config, "missing template file: " + file.string());
        std::string body = read_file(file);
        if (body.size() >= 1 && body.back() == '\n') {
            body.pop_back();
            if (!body.empty() && body.back() == '\r') body.pop_back();
        }
        if (trim(body).empty()) fail(errc::config, "empty template body: " + file.string());
        PromptTemplate t{id, domain, std::move(body)};
        for (const auto& name : t.placeholders())
            if (!declared_placeholders(id).count(name))
                fail(errc::config, file.string() + ": unknown placeholder '{" + name + "}' for " +
                                       template_id_name(id));
        set.templates[id] = std::move(t);
    }
    return set;
}

inline const std::vector<std::string>& builtin_domains() {
    static const std::vector<std::string> domains = {"banking", "daily_life", "question_type",
                                                     "generic"};
    return domains;
}

inline std::vector<TemplateSet> builtin_template_sets(const std::filesystem::path& root) {
    std::vector<TemplateSet> sets;
    for (const auto& domain : builtin_domains()) sets.push_back(load_template_set(root, domain));
    return sets;
}

/// A template set plus the optional {domain} subject text, so call sites can
/// render without caring whether the set is domain-parameterized.
struct PromptContext {
    const TemplateSet* set = nullptr;
    std::string domain_text; // bound to {domain} when a body uses it
    warning_sink warnings;

    std::string render(template_id id, Bindings bindings) const {
        const PromptTemplate& t = set->get(id);
        if (t.uses("domain") && !bindings.count("domain")) {
            if (domain_text.empty())
                fail(errc::config, "template set '" + set->domain +
                                       "' needs a domain text for {domain}");
            bindings["domain"] = domain_text;
        }
        return tardis::render(t, bindings, warnings);
    }
};

} // namespace tardis
