#include "stancelab/trainer.hpp"

#include <chrono>
#include <cmath>

#include "stancelab/error.hpp"
#include "stancelab/io_util.hpp"
#include "stancelab/rng.hpp"
#include "stancelab/text.hpp"

namespace stancelab {

OptimizerKind parse_optimizer(const std::string& name) {
    const std::string low = utf8_lowercase(name);
    if (low == "adam") return OptimizerKind::ADAM;
    if (low == "sgd") return OptimizerKind::SGD;
    raise(ErrorKind::Parse, "unknown optimizer \"" + name + "\" (expected adam or sgd)");
}

std::string optimizer_name(OptimizerKind kind) {
    return kind == OptimizerKind::ADAM ? "adam" : "sgd";
}

void TrainConfig::validate() const {
    if (!(lambda >= 0.0)) raise(ErrorKind::InvalidArgument, "TrainConfig: lambda must be >= 0");
    if (!(learning_rate >= 0.0)) {
        raise(ErrorKind::InvalidArgument, "TrainConfig: learning_rate must be >= 0");
    }
    if (epochs < 1) raise(ErrorKind::InvalidArgument, "TrainConfig: epochs must be >= 1");
    if (batch_size < 1) raise(ErrorKind::InvalidArgument, "TrainConfig: batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        raise(ErrorKind::InvalidArgument, "TrainConfig: betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) raise(ErrorKind::InvalidArgument, "TrainConfig: adam_eps must be > 0");
    if (!(grad_clip_norm >= 0.0)) {
        raise(ErrorKind::InvalidArgument, "TrainConfig: grad_clip_norm must be >= 0");
    }
}

nlohmann::json TrainConfig::to_json() const {
    return nlohmann::json{{"objective", objective_name(objective)},
                          {"lambda", lambda},
                          {"learning_rate", learning_rate},
                          {"epochs", epochs},
                          {"batch_size", batch_size},
                          {"seed", seed},
                          {"optimizer", optimizer_name(optimizer)},
                          {"beta1", beta1},
                          {"beta2", beta2},
                          {"adam_eps", adam_eps},
                          {"grad_clip_norm", grad_clip_norm},
                          {"checkpoint_path", checkpoint_path}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) raise(ErrorKind::Parse, "TrainConfig: expected a JSON object");
    TrainConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "objective") {
            cfg.objective = parse_objective(value.get<std::string>());
        } else if (key == "lambda") {
            cfg.lambda = value.get<double>();
        } else if (key == "learning_rate") {
            cfg.learning_rate = value.get<double>();
        } else if (key == "epochs") {
            cfg.epochs = value.get<int>();
        } else if (key == "batch_size") {
            cfg.batch_size = value.get<int>();
        } else if (key == "seed") {
            cfg.seed = value.get<std::uint64_t>();
        } else if (key == "optimizer") {
            cfg.optimizer = parse_optimizer(value.get<std::string>());
        } else if (key == "beta1") {
            cfg.beta1 = value.get<double>();
        } else if (key == "beta2") {
            cfg.beta2 = value.get<double>();
        } else if (key == "adam_eps") {
            cfg.adam_eps = value.get<double>();
        } else if (key == "grad_clip_norm") {
            cfg.grad_clip_norm = value.get<double>();
        } else if (key == "checkpoint_path") {
            cfg.checkpoint_path = value.get<std::string>();
        } else {
            raise(ErrorKind::Parse, "TrainConfig: unknown key \"" + key + "\"");
        }
    }
    cfg.validate();
    return cfg;
}

namespace {

void save_checkpoint(const std::string& path, const Vocab& vocab, const LMParams& params) {
    if (path.empty()) return;
    LMModel(vocab, params.dims(), params).save(path);
}

}  // namespace

TrainResult train(const std::vector<PreferenceTriple>& triples, const Vocab& vocab,
                  const LMParams& init, const TrainConfig& config) {
    config.validate();
    if (triples.empty()) raise(ErrorKind::InvalidArgument, "train: no triples");
    if (vocab.size() != init.dims().vocab) {
        raise(ErrorKind::InvalidArgument, "train: vocab size disagrees with the model dims");
    }

    const bool needs_rejected = config.objective == Objective::ORPO;
    const std::vector<TokenizedTriple> data =
        tokenize_triples(vocab, triples, init.dims().context, needs_rejected);

    LMParams params = init;
    Eigen::VectorXd adam_m, adam_v;
    if (config.optimizer == OptimizerKind::ADAM) {
        adam_m = Eigen::VectorXd::Zero(params.parameter_count());
        adam_v = Eigen::VectorXd::Zero(params.parameter_count());
    }

    save_checkpoint(config.checkpoint_path, vocab, params);

    TrainResult result{std::move(params), {}};
    LMParams& p = result.params;
    int step = 0;
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const auto t0 = std::chrono::steady_clock::now();
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<TokenizedTriple> batch;
            batch.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) batch.push_back(data[order[i]]);

            LossAndGrad lg = loss_and_grad(p, batch, config.objective, config.lambda);
            ++step;

            if (config.grad_clip_norm > 0.0) {
                const double norm = lg.grad.norm();
                if (norm > config.grad_clip_norm) {
                    lg.grad *= config.grad_clip_norm / norm;
                }
            }

            if (config.optimizer == OptimizerKind::SGD) {
                p.flat() -= config.learning_rate * lg.grad;
            } else {
                adam_m = config.beta1 * adam_m + (1.0 - config.beta1) * lg.grad;
                adam_v = config.beta2 * adam_v.array() +
                         (1.0 - config.beta2) * lg.grad.array().square();
                const double corr1 = 1.0 - std::pow(config.beta1, step);
                const double corr2 = 1.0 - std::pow(config.beta2, step);
                p.flat().array() -= config.learning_rate * (adam_m.array() / corr1) /
                                    ((adam_v.array() / corr2).sqrt() + config.adam_eps);
            }

            if (!p.flat().allFinite()) {
                raise(ErrorKind::Domain, "train: non-finite parameters after step " +
                                             std::to_string(step) +
                                             "; the last saved checkpoint is retained");
            }

            const auto t1 = std::chrono::steady_clock::now();
            TrainLogRecord rec;
            rec.step = step;
            rec.loss = lg.loss;
            rec.wallclock_ms =
                std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
            result.log.push_back(rec);
        }

        save_checkpoint(config.checkpoint_path, vocab, p);
    }

    return result;
}

LossBreakdown evaluate_loss(const LMParams& params, const Vocab& vocab,
                            const std::vector<PreferenceTriple>& triples, Objective objective,
                            double lambda) {
    if (triples.empty()) raise(ErrorKind::InvalidArgument, "evaluate_loss: no triples");
    const std::vector<TokenizedTriple> data =
        tokenize_triples(vocab, triples, params.dims().context, objective == Objective::ORPO);
    return batch_loss(params, data, objective, lambda);
}

std::string train_log_to_jsonl(const std::vector<TrainLogRecord>& log) {
    std::string out;
    for (const auto& rec : log) {
        nlohmann::json j{{"step", rec.step},
                         {"total", rec.loss.total},
                         {"sft", rec.loss.sft},
                         {"or_term", rec.loss.or_term},
                         {"lambda", rec.loss.lambda}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

void save_train_log(const std::vector<TrainLogRecord>& log, const std::string& path) {
    write_file(path, train_log_to_jsonl(log));
}

}  // namespace stancelab
