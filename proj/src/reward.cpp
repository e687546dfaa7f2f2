// SPDX-License-Identifier: Apache-2.0
#include <tirgym/error.hpp>
#include <tirgym/reward.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

namespace tirgym
{

std::string_view match_mode_name(MatchMode mode) noexcept
{
    return mode == MatchMode::Label ? "label" : "normalized_text";
}

std::string_view scheme_name(RewardScheme scheme) noexcept
{
    switch (scheme)
    {
        case RewardScheme::Default: return "default";
        case RewardScheme::Reward1: return "reward1";
        case RewardScheme::Reward2: return "reward2";
    }
    return "unknown";
}

RewardScheme scheme_from_name(std::string_view name)
{
    for (auto s: { RewardScheme::Default, RewardScheme::Reward1, RewardScheme::Reward2 })
        if (scheme_name(s) == name)
            return s;
    throw Error(Errc::InvalidConfig, "unknown reward scheme '" + std::string(name) + "'");
}

void RewardConfig::validate() const
{
    for (auto w: weights)
        if (!(w >= 0) || !std::isfinite(w))
            throw Error(Errc::InvalidConfig, "reward weights must be finite and non-negative");
    grammar.validate();
}

RewardConfig RewardConfig::from_config(const KeyValueConfig& kv)
{
    if (kv.get_int("reward.version", 1) != 1)
        throw Error(Errc::VersionMismatch, "reward config version must be 1");
    auto cfg = RewardConfig {};
    cfg.weights[0] = kv.get_double("reward.weight.format", 1.0);
    cfg.weights[1] = kv.get_double("reward.weight.accuracy", 1.0);
    cfg.weights[2] = kv.get_double("reward.weight.tool_use", 1.0);
    auto mode = kv.get_or("reward.match_mode", "label");
    if (mode == "label")
        cfg.match_mode = MatchMode::Label;
    else if (mode == "normalized_text")
        cfg.match_mode = MatchMode::NormalizedText;
    else
        throw Error(Errc::InvalidConfig, "unknown match mode '" + mode + "'");
    cfg.scheme = scheme_from_name(kv.get_or("reward.scheme", "default"));
    cfg.require_ok_tool = kv.get_bool("reward.require_ok_tool", true);
    cfg.grammar = GrammarConfig::from_config(kv);
    cfg.validate();
    return cfg;
}

RewardConfig RewardConfig::load(const std::filesystem::path& path)
{
    return from_config(KeyValueConfig::load(path));
}

KeyValueConfig RewardConfig::to_config() const
{
    auto kv = grammar.to_config();
    auto num = [](double v) {
        auto j = Json(v);
        return j.dump();
    };
    kv.set("reward.version", "1");
    kv.set("reward.weight.format", num(weights[0]));
    kv.set("reward.weight.accuracy", num(weights[1]));
    kv.set("reward.weight.tool_use", num(weights[2]));
    kv.set("reward.match_mode", std::string(match_mode_name(match_mode)));
    kv.set("reward.scheme", std::string(scheme_name(scheme)));
    kv.set("reward.require_ok_tool", require_ok_tool ? "true" : "false");
    return kv;
}

void AnswerKey::validate() const
{
    if (trim(gold).empty())
        throw Error(Errc::InvalidTask, "answer key gold is empty");
    if (match_mode != MatchMode::Label)
        return;
    auto found = std::any_of(options.begin(), options.end(), [&](auto const& o) { return o.label == gold; });
    if (!found)
        throw Error(Errc::InvalidTask, "label-mode gold '" + gold + "' is not an option label");
}

AnswerKey AnswerKey::from_task(const TaskInstance& task, MatchMode mode)
{
    auto key = AnswerKey { task.answer_key, task.options, task.options.empty() ? MatchMode::NormalizedText : mode };
    key.validate();
    return key;
}

namespace
{

// tags are glued to the neighbouring words, so blank them out before tokenizing
std::string without_tags(std::string text, const GrammarConfig& cfg)
{
    for (auto const* tag: { &cfg.think_open, &cfg.think_close, &cfg.tool_open, &cfg.tool_close, &cfg.answer_open,
                            &cfg.answer_close })
        for (auto pos = text.find(*tag); pos != std::string::npos; pos = text.find(*tag, pos))
            text.replace(pos, tag->size(), " ");
    return text;
}

bool repetitive(const std::string& span, const GrammarConfig& cfg)
{
    return detect_repetitive_generation(without_tags(span, cfg), cfg);
}

} // namespace

int format_reward(const Trajectory& t, const GrammarConfig& cfg)
{
    auto const& s = t.steps;
    auto const policy_ok = [&](const TrajectoryStep& think, const TrajectoryStep& action, SpanKind want) {
        if (think.role != Role::Policy || action.role != Role::Policy)
            return false;
        if (repetitive(think.span, cfg) || repetitive(action.span, cfg))
            return false;
        try
        {
            auto turn = parse_turn(think.span + action.span, cfg);
            return turn.is_tool_call() == (want == SpanKind::ToolCall);
        }
        catch (const Error&)
        {
            return false;
        }
    };

    std::size_t i = 0;
    while (i < s.size())
    {
        if (s[i].span_kind != SpanKind::Think || i + 1 >= s.size())
            return 0;
        auto const& action = s[i + 1];
        if (action.span_kind == SpanKind::Answer)
        {
            // the answer must close the trajectory
            return (i + 2 == s.size() && policy_ok(s[i], action, SpanKind::Answer)) ? 1 : 0;
        }
        if (action.span_kind != SpanKind::ToolCall || !policy_ok(s[i], action, SpanKind::ToolCall))
            return 0;
        if (i + 2 >= s.size() || s[i + 2].span_kind != SpanKind::Obs || s[i + 2].role != Role::Environment)
            return 0;
        i += 3;
        if (i < s.size() && s[i].span_kind == SpanKind::ForcePrompt)
        {
            if (s[i].role != Role::Environment)
                return 0;
            ++i;
        }
    }
    return 0;
}

std::string normalize_text(std::string_view raw)
{
    auto out = std::string {};
    for (auto word: split_whitespace(raw))
    {
        if (!out.empty())
            out += ' ';
        for (char c: word)
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    while (!out.empty() && std::string_view(".,;:!?").find(out.back()) != std::string_view::npos)
        out.pop_back();
    while (!out.empty() && out.back() == ' ')
        out.pop_back();
    return out;
}

namespace
{

bool iequals(std::string_view a, std::string_view b)
{
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
           });
}

std::optional<std::string> match_label(std::string_view s, const AnswerKey& key)
{
    bool paren = !s.empty() && s.front() == '(';
    if (paren)
        s.remove_prefix(1);
    std::size_t n = 0;
    while (n < s.size() && std::isalnum(static_cast<unsigned char>(s[n])))
        ++n;
    if (n == 0)
        return std::nullopt;
    auto token = s.substr(0, n);
    auto option = std::find_if(key.options.begin(), key.options.end(), [&](auto const& o) { return iequals(o.label, token); });
    if (option == key.options.end())
        return std::nullopt;
    s.remove_prefix(n);
    if (paren)
    {
        if (s.empty() || s.front() != ')')
            return std::nullopt;
        s.remove_prefix(1);
    }
    else if (!s.empty() && std::string_view(".):,").find(s.front()) != std::string_view::npos)
    {
        s.remove_prefix(1);
    }
    else if (!s.empty() && !std::isspace(static_cast<unsigned char>(s.front())))
    {
        return std::nullopt;
    }
    auto rest = normalize_text(s);
    if (rest.empty() || rest == normalize_text(option->text))
        return option->label;
    return std::nullopt;
}

} // namespace

std::optional<std::string> normalize_answer(std::string_view raw, const AnswerKey& key)
{
    auto s = trim(raw);
    if (s.empty())
        return std::nullopt;
    if (key.match_mode == MatchMode::NormalizedText)
    {
        auto n = normalize_text(s);
        if (n.empty())
            return std::nullopt;
        return n;
    }
    if (auto label = match_label(s, key))
        return label;
    auto n = normalize_text(s);
    for (auto const& o: key.options)
        if (!n.empty() && normalize_text(o.text) == n)
            return o.label;
    return std::nullopt;
}

std::optional<std::string> extract_answer(const Trajectory& t, const GrammarConfig& cfg)
{
    for (auto it = t.steps.rbegin(); it != t.steps.rend(); ++it)
    {
        if (it->span_kind != SpanKind::Answer)
            continue;
        auto span = trim(it->span);
        if (span.size() < cfg.answer_open.size() + cfg.answer_close.size() || !span.starts_with(cfg.answer_open) ||
            !span.ends_with(cfg.answer_close))
            return std::nullopt;
        span.remove_prefix(cfg.answer_open.size());
        span.remove_suffix(cfg.answer_close.size());
        return std::string(trim(span));
    }
    return std::nullopt;
}

int accuracy_reward(const Trajectory& t, const AnswerKey& key, const RewardConfig& cfg)
{
    if (format_reward(t, cfg.grammar) == 0)
        return 0;
    auto answer = extract_answer(t, cfg.grammar);
    if (!answer)
        return 0;
    auto predicted = normalize_answer(*answer, key);
    auto gold = normalize_answer(key.gold, key);
    return predicted && gold && *predicted == *gold ? 1 : 0;
}

bool has_tool_use(const Trajectory& t, const RewardConfig& cfg)
{
    for (auto const& step: t.steps)
    {
        if (cfg.require_ok_tool)
        {
            if (step.span_kind == SpanKind::Obs && step.tool_status == ToolStatus::Ok)
                return true;
        }
        else if (step.span_kind == SpanKind::ToolCall)
        {
            return true;
        }
    }
    return false;
}

int tool_use_reward(const Trajectory& t, int acc, const RewardConfig& cfg)
{
    return acc == 1 && has_tool_use(t, cfg) ? 1 : 0;
}

RewardBreakdown total_reward(const Trajectory& t, const AnswerKey& key, const RewardConfig& cfg)
{
    auto r = RewardBreakdown {};
    r.format = format_reward(t, cfg.grammar);
    r.accuracy = accuracy_reward(t, key, cfg);
    switch (cfg.scheme)
    {
        case RewardScheme::Default:
            r.tool_use = tool_use_reward(t, static_cast<int>(r.accuracy), cfg);
            r.total = cfg.weights[0] * r.format + cfg.weights[1] * r.accuracy + cfg.weights[2] * r.tool_use;
            break;
        case RewardScheme::Reward1:
            r.tool_use = 0;
            r.total = r.format * r.accuracy;
            break;
        case RewardScheme::Reward2:
            r.tool_use = has_tool_use(t, cfg) ? 1 : 0;
            r.total = r.format + r.accuracy + r.tool_use;
            break;
    }
    return r;
}

} // namespace tirgym
