// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <tirgym/reward.hpp>
#include <tirgym/trajectory.hpp>

#include <map>
#include <memory>

namespace tirgym
{

struct TrajectoryRecord
{
    Trajectory trajectory;
    RewardBreakdown reward;
    std::optional<double> judge_score;
    double weight = 1.0;
    bool judge_unavailable = false;
    std::vector<std::string> judge_issues;

    friend bool operator==(const TrajectoryRecord&, const TrajectoryRecord&) = default;
};

Json record_to_json(const TrajectoryRecord& r);
/// Unknown fields are ignored.
TrajectoryRecord record_from_json(const Json& j);
std::vector<TrajectoryRecord> load_records(const std::filesystem::path& path);
void save_records(const std::filesystem::path& path, const std::vector<TrajectoryRecord>& records);
/// Wraps graded trajectories; throws InvalidRequest for a trajectory without a reward.
std::vector<TrajectoryRecord> records_from_trajectories(const std::vector<Trajectory>& trajectories);

struct FilterReport
{
    std::vector<TrajectoryRecord> kept;
    std::size_t dropped_wrong_answer = 0;
    std::size_t dropped_malformed = 0;
};

/// Keeps records with format == 1 and accuracy == 1; malformed takes precedence over wrong.
FilterReport outcome_filter(const std::vector<TrajectoryRecord>& records);

struct JudgeVerdict
{
    double overall_score = 0;
    std::map<std::string, double> dimension_scores;
    std::vector<std::string> issues;
};

Json verdict_to_json(const JudgeVerdict& v);
JudgeVerdict verdict_from_json(const Json& j);

struct JudgeConfig
{
    double scale_min = 1;
    double scale_max = 4;
    double min_score = 2;
    std::map<int, double> weight_map { { 1, 0.0 }, { 2, 0.5 }, { 3, 1.0 }, { 4, 1.0 } };
    std::size_t think_min_chars = 8;
    std::size_t think_max_chars = 2000;

    void validate() const;
    static JudgeConfig from_config(const KeyValueConfig& kv);
    [[nodiscard]] double weight_for(double score) const;
};

class Judge
{
  public:
    virtual ~Judge() = default;
    /// Throws Error(JudgeUnavailable) when no verdict can be obtained.
    virtual JudgeVerdict judge(const Trajectory& t) = 0;
};

/// Starts from the top of the scale. No tool call drops to the bottom; any
/// non-ok tool result and any think span outside the length bounds each cost one notch.
class RuleJudge: public Judge
{
  public:
    explicit RuleJudge(JudgeConfig cfg = {});
    JudgeVerdict judge(const Trajectory& t) override;

  private:
    JudgeConfig _cfg;
};

/// Posts the trajectory to a judge endpoint speaking the gateway envelope.
class HttpJudge: public Judge
{
  public:
    HttpJudge(std::string host, int port, std::string path = "/v1/judge", std::chrono::milliseconds timeout = std::chrono::seconds(10));
    JudgeVerdict judge(const Trajectory& t) override;

  private:
    std::string _host;
    int _port;
    std::string _path;
    std::chrono::milliseconds _timeout;
};

/// Out-of-scale verdicts and judge failures leave the record at weight 1 with the unavailable flag.
TrajectoryRecord judge_and_weight(TrajectoryRecord record, Judge& judge, const JudgeConfig& cfg = {});

/// (task_id, call keys in order, answer). Unparseable call spans contribute their raw text.
std::string action_sequence_key(const Trajectory& t, const GrammarConfig& cfg = {});

/// One record per action-sequence key: highest judge score, ties to the smaller trajectory hash.
/// Survivors keep their input order.
std::vector<TrajectoryRecord> dedup(const std::vector<TrajectoryRecord>& records, const GrammarConfig& cfg = {});

enum class MessageRole
{
    System,
    User,
    Assistant,
    Environment,
};

std::string_view message_role_name(MessageRole role) noexcept;

struct SftMessage
{
    MessageRole role = MessageRole::User;
    std::string text;
    bool loss_mask = false;

    friend bool operator==(const SftMessage&, const SftMessage&) = default;
};

struct SftExample
{
    std::string task_id;
    std::string trajectory_hash;
    std::vector<SftMessage> messages;
    double weight = 1.0;

    friend bool operator==(const SftExample&, const SftExample&) = default;
};

Json sft_to_json(const SftExample& e);

/// Records with weight > 0, ordered by task id then trajectory hash. Assistant messages
/// hold a think span plus its action; Environment messages hold the observation and any
/// force prompt that follows it.
std::vector<SftExample> export_sft(const std::vector<TrajectoryRecord>& records, const std::string& system_prompt);
void write_sft(const std::filesystem::path& path, const std::vector<SftExample>& examples);

} // namespace tirgym
