#pragma once

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>
#include <vector>

#include "transaudio/error.hpp"
#include "transaudio/model.hpp"

namespace transaudio {

inline constexpr std::string_view kModelFormat = "transaudio-model";
inline constexpr int kModelVersion = 1;

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
    throw FormatError("matrix shape does not match its data");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  }
  return m;
}

inline nlohmann::json row_to_json(const Eigen::RowVectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::RowVectorXd row_from_json(const nlohmann::json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::RowVectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

}  // namespace detail

inline nlohmann::json model_to_json(const ModelParams& p) {
  nlohmann::json weights = nlohmann::json::object();
  for (const auto& [name, f] : Weights::kFields) {
    weights[std::string(name)] = detail::matrix_to_json(p.weights.*f);
  }
  return {{"format", kModelFormat},
          {"version", kModelVersion},
          {"arch", to_string(p.arch)},
          {"vocab", p.vocab.words()},
          {"lambda", p.lambda},
          {"norm_mean", detail::row_to_json(p.norm_mean)},
          {"norm_inv_std", detail::row_to_json(p.norm_inv_std)},
          {"weights", weights}};
}

inline ModelParams model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kModelFormat) {
      throw FormatError("not a model file");
    }
    const int version = j.at("version").get<int>();
    if (version != kModelVersion) {
      throw FormatError("unsupported model file version " + std::to_string(version));
    }
    ModelParams p;
    p.arch = parse_arch(j.at("arch").get<std::string>());
    p.vocab = Vocab(j.at("vocab").get<std::vector<std::string>>());
    p.lambda = j.at("lambda").get<double>();
    p.norm_mean = detail::row_from_json(j.at("norm_mean"));
    p.norm_inv_std = detail::row_from_json(j.at("norm_inv_std"));
    if (p.norm_mean.size() != kNumMels || p.norm_inv_std.size() != kNumMels) {
      throw FormatError("feature normalization has the wrong size");
    }
    const auto& weights = j.at("weights");
    for (const auto& [name, f] : Weights::kFields) {
      p.weights.*f = detail::matrix_from_json(weights.at(std::string(name)));
    }
    const ModelParams like = init_params(p.arch, p.vocab, 0);
    for (const auto& [name, f] : Weights::kFields) {
      if ((p.weights.*f).rows() != (like.weights.*f).rows() ||
          (p.weights.*f).cols() != (like.weights.*f).cols()) {
        throw FormatError("weight '" + std::string(name) + "' has the wrong shape");
      }
    }
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model file: ") + e.what());
  }
}

inline void save_model(const ModelParams& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << model_to_json(p).dump() << '\n';
  if (!out) throw IoError("failed writing " + path);
}

inline ModelParams load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace transaudio
