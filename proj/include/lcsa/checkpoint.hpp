#pragma once

// Text checkpoint for recurrent models:
//
//   lcsa-model v1
//   kind lstm|bilstm
//   config <key>=<value> ...
//   tensor <name> <rows> <cols>
//   <rows lines of cols values>
//   ...
//   end

#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "lcsa/neural.hpp"
#include "lcsa/ngsim.hpp"

namespace lcsa {

namespace detail {

inline void write_tensor(std::ostream& out, const std::string& name, const Eigen::MatrixXd& m) {
  out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << format_double(m(i, j));
    out << '\n';
  }
}

inline Eigen::MatrixXd read_tensor(std::istream& in, const std::string& name) {
  std::string tag, got;
  Eigen::Index rows = 0, cols = 0;
  if (!(in >> tag >> got >> rows >> cols) || tag != "tensor" || got != name)
    throw ParseError("checkpoint: expected tensor '" + name + "'");
  if (rows < 0 || cols < 0) throw ParseError("checkpoint: negative shape for '" + name + "'");
  Eigen::MatrixXd m(rows, cols);
  std::string s;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!(in >> s) || !parse_double(s, m(i, j))) throw ParseError("checkpoint: bad value in '" + name + "'");
    }
  return m;
}

}  // namespace detail

inline void write_model(std::ostream& out, const ModelWeights& w, const TrainConfig& cfg) {
  out << "lcsa-model v1\n";
  out << "kind " << (w.bidirectional() ? "bilstm" : "lstm") << '\n';
  out << "config T_F=" << format_double(cfg.T_F) << " T_B=" << format_double(cfg.T_B)
      << " learning_rate=" << format_double(cfg.learning_rate) << " l2=" << format_double(cfg.l2)
      << " epochs=" << cfg.epochs << " batch_size=" << cfg.batch_size << " seed=" << cfg.seed
      << " hidden_dim=" << cfg.hidden_dim << " embed_dim=" << cfg.embed_dim
      << " clip_norm=" << format_double(cfg.clip_norm) << " init_scale=" << format_double(cfg.init_scale)
      << " class_weights=" << (cfg.class_weights ? 1 : 0) << '\n';
  detail::write_tensor(out, "embedding.W", w.embedding.W);
  detail::write_tensor(out, "embedding.b", w.embedding.b);
  detail::write_tensor(out, "forward.W", w.forward.W);
  detail::write_tensor(out, "forward.U", w.forward.U);
  detail::write_tensor(out, "forward.b", w.forward.b);
  if (w.backward) {
    detail::write_tensor(out, "backward.W", w.backward->W);
    detail::write_tensor(out, "backward.U", w.backward->U);
    detail::write_tensor(out, "backward.b", w.backward->b);
  }
  detail::write_tensor(out, "output.W", w.Wo);
  detail::write_tensor(out, "output.b", w.bo);
  out << "end\n";
}

struct LoadedModel {
  ModelWeights weights;
  TrainConfig config;
};

inline LoadedModel read_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "lcsa-model v1") throw ParseError("not an lcsa model checkpoint");
  std::string tag, kind;
  if (!(in >> tag >> kind) || tag != "kind" || (kind != "lstm" && kind != "bilstm"))
    throw ParseError("checkpoint: missing or unknown model kind");
  std::getline(in, line);
  if (!std::getline(in, line) || line.rfind("config", 0) != 0) throw ParseError("checkpoint: missing config line");
  std::map<std::string, std::string> kv;
  {
    std::istringstream ls(line.substr(6));
    std::string item;
    while (ls >> item) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ParseError("checkpoint: bad config item '" + item + "'");
      kv[item.substr(0, eq)] = item.substr(eq + 1);
    }
  }
  auto num = [&](const std::string& key) {
    double v = 0;
    auto it = kv.find(key);
    if (it == kv.end() || !detail::parse_double(it->second, v)) throw ParseError("checkpoint: config lacks '" + key + "'");
    return v;
  };
  LoadedModel m;
  auto& c = m.config;
  c.T_F = num("T_F");
  c.T_B = num("T_B");
  c.learning_rate = num("learning_rate");
  c.l2 = num("l2");
  c.epochs = static_cast<int>(num("epochs"));
  c.batch_size = static_cast<int>(num("batch_size"));
  c.seed = static_cast<std::uint64_t>(std::stoull(kv.at("seed")));
  c.hidden_dim = static_cast<int>(num("hidden_dim"));
  c.embed_dim = static_cast<int>(num("embed_dim"));
  c.clip_norm = num("clip_norm");
  c.init_scale = num("init_scale");
  c.class_weights = num("class_weights") != 0;

  auto& w = m.weights;
  w.embedding.W = detail::read_tensor(in, "embedding.W");
  w.embedding.b = detail::read_tensor(in, "embedding.b");
  w.forward.W = detail::read_tensor(in, "forward.W");
  w.forward.U = detail::read_tensor(in, "forward.U");
  w.forward.b = detail::read_tensor(in, "forward.b");
  if (kind == "bilstm") {
    LstmCellParams b;
    b.W = detail::read_tensor(in, "backward.W");
    b.U = detail::read_tensor(in, "backward.U");
    b.b = detail::read_tensor(in, "backward.b");
    w.backward = std::move(b);
  }
  w.Wo = detail::read_tensor(in, "output.W");
  w.bo = detail::read_tensor(in, "output.b");
  if (!(in >> tag) || tag != "end") throw ParseError("checkpoint: missing end marker");
  if (w.embedding.b.cols() != 1 || w.forward.b.cols() != 1 || w.bo.cols() != 1 ||
      (w.backward && w.backward->b.cols() != 1))
    throw ParseError("checkpoint: bias tensors must be column vectors");
  try {
    w.validate();
  } catch (const ContractError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  if (w.hidden() != c.hidden_dim || w.embedding.dim() != c.embed_dim)
    throw ParseError("checkpoint: tensor shapes disagree with the stored config");
  return m;
}

}  // namespace lcsa
