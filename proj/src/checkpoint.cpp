#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgtk/trainer.hpp"

namespace mgtk {

namespace {
constexpr char kMagic[8] = {'M', 'G', 'T', 'K', 'C', 'K', 'P', '1'};

void write_doubles(std::ofstream& out, const double* data, size_t n) {
  out.write(reinterpret_cast<const char*>(data), std::streamsize(n * sizeof(double)));
}

void read_doubles(std::ifstream& in, double* data, size_t n) {
  in.read(reinterpret_cast<char*>(data), std::streamsize(n * sizeof(double)));
  if (!in) throw IoError("checkpoint truncated");
}

nlohmann::json kind_to_json(const ManifoldKind& k) {
  return {{"tag", manifold_name(k.tag)}, {"dim", k.dim}};
}

ManifoldKind kind_from_json(const nlohmann::json& j) {
  ManifoldKind k;
  const std::string tag = j.at("tag").get<std::string>();
  if (tag == "euclidean") k.tag = Manifold::Euclidean;
  else if (tag == "hyperbolic") k.tag = Manifold::Hyperbolic;
  else if (tag == "spherical") k.tag = Manifold::Spherical;
  else throw IoError("unknown manifold tag: " + tag);
  k.dim = j.at("dim").get<int>();
  return k;
}
}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& header_extra_json,
                     const std::string& path) {
  nlohmann::json header;
  header["version"] = 1;
  header["metrics"] = nlohmann::json::array();
  for (const auto& k : params.metrics) header["metrics"].push_back(kind_to_json(k));
  header["n_entities"] = params.n_entities();
  header["n_relations"] = int(params.transports.size());
  header["n_bins"] = int(params.alpha.cols());
  header["copies"] = params.metrics.empty() ? 0 : int(params.embeddings[0].size());
  header["per_bin_embeddings"] = params.per_bin_embeddings;
  header["bounds"] = {{"R_E", params.bounds.R_E},
                      {"R_H", params.bounds.R_H},
                      {"delta_S", params.bounds.delta_S},
                      {"B_phi", params.bounds.B_phi},
                      {"S_max", params.bounds.S_max}};
  header["layout"] = "embeddings per metric/copy/entity, transport rotations "
                     "row-major, transport translations, alpha row-major, beta, "
                     "tau, mixture logits, mixture weights; little-endian f64";
  if (!header_extra_json.empty())
    header["extra"] = nlohmann::json::parse(header_extra_json);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const std::string hs = header.dump();
  out.write(kMagic, 8);
  const std::uint64_t len = hs.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(hs.data(), std::streamsize(hs.size()));

  for (size_t m = 0; m < params.embeddings.size(); ++m)
    for (const auto& copy : params.embeddings[m])
      for (const Point& pt : copy)
        write_doubles(out, pt.coords.data(), size_t(pt.coords.size()));
  for (const auto& row : params.transports)
    for (const Transport& t : row) {
      std::vector<double> rot(t.rotation.size());
      for (int i = 0; i < t.rotation.rows(); ++i)
        for (int j = 0; j < t.rotation.cols(); ++j)
          rot[size_t(i) * t.rotation.cols() + j] = t.rotation(i, j);
      write_doubles(out, rot.data(), rot.size());
      write_doubles(out, t.translation.data(), size_t(t.translation.size()));
    }
  std::vector<double> alpha(params.alpha.size());
  for (int i = 0; i < params.alpha.rows(); ++i)
    for (int j = 0; j < params.alpha.cols(); ++j)
      alpha[size_t(i) * params.alpha.cols() + j] = params.alpha(i, j);
  write_doubles(out, alpha.data(), alpha.size());
  write_doubles(out, params.beta.data(), size_t(params.beta.size()));
  write_doubles(out, params.tau.data(), size_t(params.tau.size()));
  auto write_mat = [&](const Mat& m2) {
    std::vector<double> buf(m2.size());
    for (int i = 0; i < m2.rows(); ++i)
      for (int j = 0; j < m2.cols(); ++j)
        buf[size_t(i) * m2.cols() + j] = m2(i, j);
    write_doubles(out, buf.data(), buf.size());
  };
  write_mat(params.mixture.logits);
  write_mat(params.mixture.weights);
  if (!out) throw IoError("write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path, std::string* header_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("not a checkpoint file: " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string hs(len, '\0');
  in.read(hs.data(), std::streamsize(len));
  if (!in) throw IoError("checkpoint truncated");
  const nlohmann::json header = nlohmann::json::parse(hs);
  if (header_json) *header_json = hs;

  ModelParams p;
  for (const auto& jk : header.at("metrics")) p.metrics.push_back(kind_from_json(jk));
  const int n_entities = header.at("n_entities").get<int>();
  const int n_relations = header.at("n_relations").get<int>();
  const int n_bins = header.at("n_bins").get<int>();
  const int copies = header.at("copies").get<int>();
  p.per_bin_embeddings = header.at("per_bin_embeddings").get<bool>();
  const auto& jb = header.at("bounds");
  p.bounds.R_E = jb.at("R_E").get<double>();
  p.bounds.R_H = jb.at("R_H").get<double>();
  p.bounds.delta_S = jb.at("delta_S").get<double>();
  p.bounds.B_phi = jb.at("B_phi").get<double>();
  p.bounds.S_max = jb.at("S_max").get<double>();

  p.embeddings.resize(p.metrics.size());
  for (size_t m = 0; m < p.metrics.size(); ++m) {
    const int amb = p.metrics[m].ambient_dim();
    p.embeddings[m].resize(copies);
    for (int c = 0; c < copies; ++c) {
      p.embeddings[m][c].resize(n_entities);
      for (int i = 0; i < n_entities; ++i) {
        Point pt;
        pt.kind = p.metrics[m];
        pt.coords.resize(amb);
        read_doubles(in, pt.coords.data(), size_t(amb));
        p.embeddings[m][c][i] = std::move(pt);
      }
    }
  }
  p.transports.resize(n_relations);
  for (int r = 0; r < n_relations; ++r)
    for (size_t m = 0; m < p.metrics.size(); ++m) {
      Transport t = Transport::identity(p.metrics[m]);
      const int amb = p.metrics[m].ambient_dim();
      std::vector<double> rot(size_t(amb) * amb);
      read_doubles(in, rot.data(), rot.size());
      for (int i = 0; i < amb; ++i)
        for (int j = 0; j < amb; ++j) t.rotation(i, j) = rot[size_t(i) * amb + j];
      read_doubles(in, t.translation.data(), size_t(t.translation.size()));
      p.transports[r].push_back(std::move(t));
    }
  p.alpha.resize(n_relations, n_bins);
  std::vector<double> alpha(size_t(n_relations) * n_bins);
  read_doubles(in, alpha.data(), alpha.size());
  for (int i = 0; i < n_relations; ++i)
    for (int j = 0; j < n_bins; ++j) p.alpha(i, j) = alpha[size_t(i) * n_bins + j];
  p.beta.resize(n_relations);
  p.tau.resize(n_relations);
  read_doubles(in, p.beta.data(), size_t(n_relations));
  read_doubles(in, p.tau.data(), size_t(n_relations));
  const int n_metrics = int(p.metrics.size());
  p.mixture.logits.resize(n_relations, n_metrics);
  p.mixture.weights.resize(n_relations, n_metrics);
  std::vector<double> buf(size_t(n_relations) * n_metrics);
  read_doubles(in, buf.data(), buf.size());
  for (int i = 0; i < n_relations; ++i)
    for (int j = 0; j < n_metrics; ++j)
      p.mixture.logits(i, j) = buf[size_t(i) * n_metrics + j];
  read_doubles(in, buf.data(), buf.size());
  for (int i = 0; i < n_relations; ++i)
    for (int j = 0; j < n_metrics; ++j)
      p.mixture.weights(i, j) = buf[size_t(i) * n_metrics + j];
  return p;
}

TrainTrace load_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty trace file: " + path);
  std::vector<std::string> cols;
  {
    std::istringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
  }
  int rr = 0, mm = 0;
  for (const std::string& c : cols)
    if (c.rfind("E_r", 0) == 0) {
      int r = 0, m = 0;
      if (std::sscanf(c.c_str(), "E_r%d_m%d", &r, &m) == 2) {
        rr = std::max(rr, r + 1);
        mm = std::max(mm, m + 1);
      }
    }
  TrainTrace trace;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<double> vals;
    std::string cell;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() != cols.size()) throw IoError("ragged trace row in " + path);
    TraceRow row;
    row.energies = Mat::Zero(rr, mm);
    row.weights = Mat::Zero(rr, mm);
    for (size_t i = 0; i < cols.size(); ++i) {
      const std::string& c = cols[i];
      if (c == "iteration") row.iteration = int(vals[i]);
      else if (c == "lambda") row.lambda = vals[i];
      else if (c == "J") row.J = vals[i];
      else if (c == "nll") row.nll = vals[i];
      else if (c == "omega_gate") row.omega_gate = vals[i];
      else if (c == "omega_rad") row.omega_rad = vals[i];
      else if (c == "omega_corr") row.omega_corr = vals[i];
      else if (c == "weight_change") row.weight_change = vals[i];
      else if (c == "j_increased") row.j_increased = vals[i] != 0;
      else if (c == "coeff_refresh_rejected") row.coeff_refresh_rejected = int(vals[i]);
      else if (c == "weight_update_damped") row.weight_update_damped = int(vals[i]);
      else if (c == "degenerate_contexts") row.degenerate_contexts = int(vals[i]);
      else if (c == "infeasible_contexts") row.infeasible_contexts = int(vals[i]);
      else if (c == "transport_clamps") row.transport_clamps = int(vals[i]);
      else if (c == "pinned_embeddings") row.pinned_embeddings = int(vals[i]);
      else if (c == "repair_failures") row.repair_failures = int(vals[i]);
      else if (c.rfind("E_r", 0) == 0) {
        int r = 0, m = 0;
        if (std::sscanf(c.c_str(), "E_r%d_m%d", &r, &m) == 2)
          row.energies(r, m) = vals[i];
      } else if (c.rfind("w_r", 0) == 0) {
        int r = 0, m = 0;
        if (std::sscanf(c.c_str(), "w_r%d_m%d", &r, &m) == 2)
          row.weights(r, m) = vals[i];
      }
    }
    trace.rank_deficiency_failures += row.repair_failures;
    trace.rows.push_back(std::move(row));
  }
  return trace;
}

void save_trace_csv(const TrainTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "iteration,lambda,J,nll,omega_gate,omega_rad,omega_corr,weight_change,"
         "j_increased,coeff_refresh_rejected,weight_update_damped,"
         "degenerate_contexts,infeasible_contexts,transport_clamps,pinned_embeddings,"
         "repair_failures";
  if (!trace.rows.empty()) {
    const Mat& e = trace.rows.front().energies;
    for (int r = 0; r < e.rows(); ++r)
      for (int m = 0; m < e.cols(); ++m) out << ",E_r" << r << "_m" << m;
    for (int r = 0; r < e.rows(); ++r)
      for (int m = 0; m < e.cols(); ++m) out << ",w_r" << r << "_m" << m;
  }
  out << '\n';
  out.precision(17);
  for (const TraceRow& row : trace.rows) {
    out << row.iteration << ',' << row.lambda << ',' << row.J << ',' << row.nll
        << ',' << row.omega_gate << ',' << row.omega_rad << ',' << row.omega_corr
        << ',' << row.weight_change << ',' << int(row.j_increased) << ','
        << row.coeff_refresh_rejected << ',' << row.weight_update_damped << ','
        << row.degenerate_contexts << ',' << row.infeasible_contexts << ','
        << row.transport_clamps << ',' << row.pinned_embeddings << ','
        << row.repair_failures;
    for (int r = 0; r < row.energies.rows(); ++r)
      for (int m = 0; m < row.energies.cols(); ++m) out << ',' << row.energies(r, m);
    for (int r = 0; r < row.weights.rows(); ++r)
      for (int m = 0; m < row.weights.cols(); ++m) out << ',' << row.weights(r, m);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace mgtk
