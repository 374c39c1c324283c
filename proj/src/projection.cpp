#include "medvrag/projection.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>

namespace mvrag {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

ProjectionModel fit_projection(const Mat& samples, std::size_t target_dim,
                               std::uint64_t /*seed*/) {
    const std::size_t S = samples.rows, D = samples.cols;
    if (S < target_dim) throw std::invalid_argument("fit_projection: insufficient samples");
    for (float v : samples.data)
        if (!std::isfinite(v)) throw std::invalid_argument("fit_projection: invalid samples");

    EMat X(S, D);
    for (std::size_t i = 0; i < S; ++i)
        for (std::size_t j = 0; j < D; ++j) X(i, j) = samples.at(i, j);

    Eigen::RowVectorXd mean = X.colwise().mean();
    X.rowwise() -= mean;
    EMat cov = (X.transpose() * X) / double(S > 1 ? S - 1 : 1);

    Eigen::SelfAdjointEigenSolver<EMat> es(cov);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("fit_projection: eigendecomposition failed");

    ProjectionModel model;
    model.source_dim = D;
    model.target_dim = target_dim;
    model.mean.resize(D);
    for (std::size_t j = 0; j < D; ++j) model.mean[j] = float(mean(j));
    model.basis = Mat(target_dim, D);
    model.explained_variance.resize(target_dim);

    // Eigen returns eigenvalues ascending; take the top target_dim in
    // descending order and fix each eigenvector's sign so the largest-
    // magnitude component is positive.
    for (std::size_t k = 0; k < target_dim; ++k) {
        Eigen::Index src = Eigen::Index(D - 1 - k);
        Eigen::VectorXd v = es.eigenvectors().col(src);
        Eigen::Index imax;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0) v = -v;
        for (std::size_t j = 0; j < D; ++j) model.basis.at(k, j) = float(v(j));
        model.explained_variance[k] = float(std::max(0.0, es.eigenvalues()(src)));
    }
    return model;
}

ProjectionResult apply_projection(const ProjectionModel& model, const Mat& vectors) {
    if (vectors.cols != model.source_dim)
        throw std::invalid_argument("apply_projection: width mismatch");
    const std::size_t k = vectors.rows, T = model.target_dim, D = model.source_dim;

    ProjectionResult out;
    out.projected = Mat(k, T);
    std::vector<double> centered(D);
    for (std::size_t i = 0; i < k; ++i) {
        const float* x = vectors.row(i);
        for (std::size_t j = 0; j < D; ++j) centered[j] = double(x[j]) - double(model.mean[j]);
        float* y = out.projected.row(i);
        for (std::size_t t = 0; t < T; ++t) {
            const float* b = model.basis.row(t);
            double s = 0.0;
            for (std::size_t j = 0; j < D; ++j) s += b[j] * centered[j];
            y[t] = float(s);
        }
        if (!normalize_row(y, T)) out.degenerate.push_back(i);
    }
    return out;
}

Mat sample_rows(const Mat& m, std::size_t max_rows, std::uint64_t seed) {
    if (m.rows <= max_rows) return m;
    std::vector<std::size_t> idx(m.rows);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(max_rows);
    std::sort(idx.begin(), idx.end());
    Mat out(max_rows, m.cols);
    for (std::size_t i = 0; i < max_rows; ++i)
        std::copy(m.row(idx[i]), m.row(idx[i]) + m.cols, out.row(i));
    return out;
}

namespace {
constexpr char kProjMagic[8] = {'M', 'V', 'P', 'R', 'O', 'J', '0', '1'};
}

void save_projection(const ProjectionModel& model, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(kProjMagic, 8);
    std::uint64_t sd = model.source_dim, td = model.target_dim;
    f.write(reinterpret_cast<const char*>(&sd), 8);
    f.write(reinterpret_cast<const char*>(&td), 8);
    f.write(reinterpret_cast<const char*>(model.mean.data()), sd * sizeof(float));
    f.write(reinterpret_cast<const char*>(model.basis.data.data()),
            model.basis.data.size() * sizeof(float));
    f.write(reinterpret_cast<const char*>(model.explained_variance.data()),
            td * sizeof(float));
}

ProjectionModel load_projection(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kProjMagic, 8) != 0)
        throw std::runtime_error("bad projection file: " + path);
    std::uint64_t sd = 0, td = 0;
    f.read(reinterpret_cast<char*>(&sd), 8);
    f.read(reinterpret_cast<char*>(&td), 8);
    ProjectionModel m;
    m.source_dim = sd;
    m.target_dim = td;
    m.mean.resize(sd);
    m.basis = Mat(td, sd);
    m.explained_variance.resize(td);
    f.read(reinterpret_cast<char*>(m.mean.data()), sd * sizeof(float));
    f.read(reinterpret_cast<char*>(m.basis.data.data()), m.basis.data.size() * sizeof(float));
    f.read(reinterpret_cast<char*>(m.explained_variance.data()), td * sizeof(float));
    if (!f) throw std::runtime_error("truncated projection file: " + path);
    return m;
}

}  // namespace mvrag
