#pragma once

// Canonical bindings and anchor phrases for the golden prompt files. The
// goldens pin rendered bytes for every (domain, id) pair; the anchors assert
// each template kept its distinctive wording.

#include <map>
#include <string>
#include <vector>

#include "tardis/prompt_forge.hpp"

namespace testsupport {

inline tardis::Bindings golden_bindings(tardis::template_id id) {
    using tardis::template_id;
    const std::vector<std::string> taxi_seeds = {"taxi now", "call me a cab to the train station"};
    const std::vector<std::string> ticket_seeds = {"book a flight to rome",
                                                   "train ticket for tomorrow"};
    const std::string disc =
        "Taxi requests ask for an immediate ride, while ticket requests reserve scheduled "
        "transport.";
    switch (id) {
        case template_id::class_description:
            return {{"target_class_name", std::string("transport_taxi")},
                    {"target_seed_data", taxi_seeds}};
        case template_id::contextualizing_text:
            return {{"data", std::string("transport_taxi")},
                    {"class_description", std::string("Requests for hailing or booking taxis.")},
                    {"target_seed_example", std::string("taxi now")}};
        case template_id::seg_generate:
            return {{"target_class", std::string("transport_taxi")},
                    {"target_seed_example", std::string("taxi now")},
                    {"contextualizing_text",
                     std::string("Ask about special vehicle options or accessibility needs.")}};
        case template_id::discriminative_text:
            return {{"target_class_name", std::string("transport_taxi")},
                    {"target_seed_data", taxi_seeds},
                    {"ambiguous_class_name", std::string("transport_ticket")},
                    {"ambiguous_seed_data", ticket_seeds}};
        case template_id::ceg_generate:
            return {{"target_class_name", std::string("transport_taxi")},
                    {"target_seed_data", taxi_seeds},
                    {"ambiguous_class_name", std::string("transport_ticket")},
                    {"ambiguous_seed_data", ticket_seeds},
                    {"discriminative_text", disc}};
        case template_id::verification:
            return {{"shots",
                     std::string("text: taxi now class: transport_taxi\n"
                                 "text: book a flight to rome class: transport_ticket\n"
                                 "text: what is my balance class: balance")},
                    {"target_text", std::string("need a ride home")}};
        case template_id::modification:
            return {{"target_class", std::string("transport_taxi")},
                    {"target_class_data", taxi_seeds},
                    {"discriminative_text", disc},
                    {"verification_result_class", std::string("transport_ticket")},
                    {"generated_example", std::string("book me a ride ticket")}};
    }
    return {};
}

// Anchor phrase each rendered prompt must contain, per (domain, id).
inline std::string anchor_phrase(const std::string& domain, tardis::template_id id) {
    using tardis::template_id;
    const bool question = domain == "question_type";
    switch (id) {
        case template_id::class_description:
            return "Describe this class in one sentence";
        case template_id::contextualizing_text:
            return question ? "suggest five ideas" : "suggest a specific idea";
        case template_id::seg_generate:
            return question ? "Reference the given sentence and generate new data"
                            : "Give me five new modified texts";
        case template_id::discriminative_text:
            return "tell me the main difference";
        case template_id::ceg_generate:
            return question ? "emphasize the unique characteristics" : "could be confused with an";
        case template_id::verification:
            return "class:";
        case template_id::modification:
            return "Modify this query text to be suitable for";
    }
    return "";
}

} // namespace testsupport
