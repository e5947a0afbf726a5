#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "tcond/error.hpp"
#include "tcond/nn/network.hpp"

namespace tcond::nn {

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  Eigen::MatrixXd m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != m.rows())
    throw InvalidInput("matrix row count does not match its shape");
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const auto& row = data.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != m.cols())
      throw InvalidInput("matrix column count does not match its shape");
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

} // namespace detail

// Self-describing JSON: layer kinds, shapes, parameters and running statistics.
inline nlohmann::json to_json(const Network& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : net.layers()) {
    if (const auto* l = std::get_if<Linear>(&layer)) {
      layers.push_back({{"kind", "linear"},
                        {"in", l->in},
                        {"out", l->out},
                        {"passthrough", l->passthrough},
                        {"bias", l->has_bias},
                        {"frozen", l->frozen},
                        {"weight", detail::matrix_to_json(l->weight)},
                        {"bias_values", detail::matrix_to_json(l->bias)}});
    } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
      layers.push_back({{"kind", "batch_norm"},
                        {"width", b->width},
                        {"momentum", b->momentum},
                        {"eps", b->eps},
                        {"gamma", detail::matrix_to_json(b->gamma)},
                        {"beta", detail::matrix_to_json(b->beta)},
                        {"running_mean", detail::matrix_to_json(b->running_mean)},
                        {"running_var", detail::matrix_to_json(b->running_var)}});
    } else if (const auto* d = std::get_if<Dropout>(&layer)) {
      layers.push_back({{"kind", "dropout"}, {"width", d->width}, {"rate", d->rate}});
    } else if (const auto* a = std::get_if<Act>(&layer)) {
      layers.push_back({{"kind", "activation"},
                        {"width", a->width},
                        {"fn", a->fn == Activation::Relu ? "relu" : "identity"}});
    }
  }
  return {{"input_width", net.input_width()}, {"layers", std::move(layers)}};
}

inline Network network_from_json(const nlohmann::json& j) {
  Network net(j.at("input_width").get<std::size_t>());
  std::size_t width = net.input_width();
  for (const auto& lj : j.at("layers")) {
    const auto kind = lj.at("kind").get<std::string>();
    if (kind == "linear") {
      Linear l;
      l.in = lj.at("in").get<std::size_t>();
      l.out = lj.at("out").get<std::size_t>();
      l.passthrough = lj.at("passthrough").get<std::size_t>();
      l.has_bias = lj.at("bias").get<bool>();
      l.frozen = lj.at("frozen").get<bool>();
      l.weight = detail::matrix_from_json(lj.at("weight"));
      l.bias = detail::matrix_from_json(lj.at("bias_values"));
      if (l.in + l.passthrough != width) throw DimensionMismatch("layer input width", width, l.in + l.passthrough);
      if (static_cast<std::size_t>(l.weight.rows()) != l.in ||
          static_cast<std::size_t>(l.weight.cols()) != l.out)
        throw InvalidInput("linear weight shape disagrees with its spec");
      width = l.out + l.passthrough;
      net.add(std::move(l));
    } else if (kind == "batch_norm") {
      BatchNorm b;
      b.width = lj.at("width").get<std::size_t>();
      b.momentum = lj.at("momentum").get<double>();
      b.eps = lj.at("eps").get<double>();
      b.gamma = detail::matrix_from_json(lj.at("gamma"));
      b.beta = detail::matrix_from_json(lj.at("beta"));
      b.running_mean = detail::matrix_from_json(lj.at("running_mean")).row(0);
      b.running_var = detail::matrix_from_json(lj.at("running_var")).row(0);
      if (b.width != width) throw DimensionMismatch("batch norm width", width, b.width);
      net.add(std::move(b));
    } else if (kind == "dropout") {
      net.add(Dropout{lj.at("width").get<std::size_t>(), lj.at("rate").get<double>()});
    } else if (kind == "activation") {
      const auto fn = lj.at("fn").get<std::string>();
      net.add(Act{lj.at("width").get<std::size_t>(),
                  fn == "relu" ? Activation::Relu : Activation::Identity});
    } else {
      throw InvalidInput("unknown layer kind '" + kind + "'");
    }
  }
  return net;
}

} // namespace tcond::nn
