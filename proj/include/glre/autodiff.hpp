#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
// A Tape owns all intermediate values; Var is a cheap handle into it.
// The op set is exactly what the model forward passes need; every op's
// backward rule is covered by the finite-difference checker in gradcheck.hpp.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <utility>
#include <vector>

#include "glre/common.hpp"

namespace glre::ad {

using Mat = Eigen::MatrixXd;

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Mat& value() const;
};

class Tape {
public:
    Var constant(Mat v) { return push(std::move(v), {}, nullptr); }

    // Leaf with tracked gradient; identical to constant except by intent.
    Var leaf(Mat v) { return push(std::move(v), {}, nullptr); }

    const Mat& value(Var v) const { return nodes_[v.id].value; }
    const Mat& grad(Var v) const { return nodes_[v.id].grad; }

    // C = A B
    Var matmul(Var a, Var b) {
        const Mat& A = value(a);
        const Mat& B = value(b);
        if (A.cols() != B.rows())
            throw ConfigError("matmul: inner dimensions disagree");
        return push(A * B, {a, b}, [](Tape& t, Node& n) {
            t.nodes_[n.parents[0]].grad += n.grad * t.nodes_[n.parents[1]].value.transpose();
            t.nodes_[n.parents[1]].grad += t.nodes_[n.parents[0]].value.transpose() * n.grad;
        });
    }

    // C = A B'
    Var matmul_nt(Var a, Var b) {
        const Mat& A = value(a);
        const Mat& B = value(b);
        if (A.cols() != B.cols())
            throw ConfigError("matmul_nt: column dimensions disagree");
        return push(A * B.transpose(), {a, b}, [](Tape& t, Node& n) {
            t.nodes_[n.parents[0]].grad += n.grad * t.nodes_[n.parents[1]].value;
            t.nodes_[n.parents[1]].grad += n.grad.transpose() * t.nodes_[n.parents[0]].value;
        });
    }

    // C = A X with A fixed (adjacency, averaging matrices).
    Var const_mul(Mat A, Var x) {
        const Mat& X = value(x);
        if (A.cols() != X.rows())
            throw ConfigError("const_mul: inner dimensions disagree");
        Mat C = A * X;
        auto Ak = std::make_shared<Mat>(std::move(A));
        return push(std::move(C), {x}, [Ak](Tape& t, Node& n) {
            t.nodes_[n.parents[0]].grad += Ak->transpose() * n.grad;
        });
    }

    Var add(Var a, Var b) {
        if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
            throw ConfigError("add: shape mismatch");
        return push(value(a) + value(b), {a, b}, [](Tape& t, Node& n) {
            t.nodes_[n.parents[0]].grad += n.grad;
            t.nodes_[n.parents[1]].grad += n.grad;
        });
    }

    Var scale(Var a, double s) {
        return push(value(a) * s, {a}, [s](Tape& t, Node& n) {
            t.nodes_[n.parents[0]].grad += n.grad * s;
        });
    }

    // X + row broadcast over all rows of X (bias add).
    Var add_row(Var x, Var row) {
        const Mat& X = value(x);
        const Mat& R = value(row);
        if (R.rows() != 1 || R.cols() != X.cols())
            throw ConfigError("add_row: bias must be 1 x cols(X)");
        Mat C = X.rowwise() + R.row(0);
        return push(std::move(C), {x, row}, [](Tape& t, Node& n) {
            t.nodes_[n.parents[0]].grad += n.grad;
            t.nodes_[n.parents[1]].grad += n.grad.colwise().sum();
        });
    }

    Var transpose(Var a) {
        return push(value(a).transpose(), {a}, [](Tape& t, Node& n) {
            t.nodes_[n.parents[0]].grad += n.grad.transpose();
        });
    }

    Var relu(Var a) {
        return push(value(a).cwiseMax(0.0), {a}, [](Tape& t, Node& n) {
            const Mat& x = t.nodes_[n.parents[0]].value;
            t.nodes_[n.parents[0]].grad +=
                n.grad.cwiseProduct((x.array() > 0.0).cast<double>().matrix());
        });
    }

    Var sigmoid(Var a) {
        Mat y = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
        return push(std::move(y), {a}, [](Tape& t, Node& n) {
            const Mat& y = n.value;
            t.nodes_[n.parents[0]].grad +=
                n.grad.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
        });
    }

    // Softmax independently over each row.
    Var softmax_rows(Var a) {
        const Mat& X = value(a);
        Mat Y(X.rows(), X.cols());
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            Eigen::ArrayXd r = X.row(i).array() - X.row(i).maxCoeff();
            Eigen::ArrayXd e = r.exp();
            Y.row(i) = (e / e.sum()).matrix();
        }
        return push(std::move(Y), {a}, [](Tape& t, Node& n) {
            const Mat& Y = n.value;
            Mat& gx = t.nodes_[n.parents[0]].grad;
            for (Eigen::Index i = 0; i < Y.rows(); ++i) {
                double dot = n.grad.row(i).dot(Y.row(i));
                gx.row(i) += (n.grad.row(i).array() - dot).matrix().cwiseProduct(Y.row(i));
            }
        });
    }

    // Row-wise layer normalization with learned gain/bias (1 x d each).
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
        const Mat& X = value(x);
        const Mat& G = value(gain);
        const Mat& B = value(bias);
        if (G.rows() != 1 || B.rows() != 1 || G.cols() != X.cols() || B.cols() != X.cols())
            throw ConfigError("layer_norm: gain/bias must be 1 x cols(X)");
        if (X.cols() < 2) throw ConfigError("layer_norm: dimension must be >= 2");
        Mat Yhat(X.rows(), X.cols());
        Eigen::VectorXd inv_sd(X.rows());
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            double mu = X.row(i).mean();
            Eigen::ArrayXd c = X.row(i).array() - mu;
            double var = c.square().mean();
            inv_sd(i) = 1.0 / std::sqrt(var + eps);
            Yhat.row(i) = (c * inv_sd(i)).matrix();
        }
        Mat out = Yhat.array().rowwise() * G.row(0).array();
        out = out.rowwise() + B.row(0);
        auto yhat = std::make_shared<Mat>(std::move(Yhat));
        auto isd = std::make_shared<Eigen::VectorXd>(std::move(inv_sd));
        return push(std::move(out), {x, gain, bias}, [yhat, isd](Tape& t, Node& n) {
            const Mat& G = t.nodes_[n.parents[1]].value;
            Mat& gx = t.nodes_[n.parents[0]].grad;
            Mat& gg = t.nodes_[n.parents[1]].grad;
            Mat& gb = t.nodes_[n.parents[2]].grad;
            const double d = static_cast<double>(yhat->cols());
            for (Eigen::Index i = 0; i < yhat->rows(); ++i) {
                Eigen::RowVectorXd dy = n.grad.row(i).cwiseProduct(G.row(0));
                double m1 = dy.mean();
                double m2 = dy.cwiseProduct(yhat->row(i)).sum() / d;
                gx.row(i) += ((dy.array() - m1 - yhat->row(i).array() * m2) * (*isd)(i)).matrix();
                gg.row(0) += n.grad.row(i).cwiseProduct(yhat->row(i));
                gb.row(0) += n.grad.row(i);
            }
        });
    }

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw ConfigError("concat_cols: empty");
        Eigen::Index rows = value(parts[0]).rows(), cols = 0;
        for (const Var& p : parts) {
            if (value(p).rows() != rows) throw ConfigError("concat_cols: row mismatch");
            cols += value(p).cols();
        }
        Mat C(rows, cols);
        Eigen::Index off = 0;
        std::vector<Eigen::Index> widths;
        for (const Var& p : parts) {
            C.middleCols(off, value(p).cols()) = value(p);
            widths.push_back(value(p).cols());
            off += value(p).cols();
        }
        return push(std::move(C), parts, [widths](Tape& t, Node& n) {
            Eigen::Index off = 0;
            for (size_t k = 0; k < n.parents.size(); ++k) {
                t.nodes_[n.parents[k]].grad += n.grad.middleCols(off, widths[k]);
                off += widths[k];
            }
        });
    }

    Var concat_rows(const std::vector<Var>& parts) {
        if (parts.empty()) throw ConfigError("concat_rows: empty");
        Eigen::Index cols = value(parts[0]).cols(), rows = 0;
        for (const Var& p : parts) {
            if (value(p).cols() != cols) throw ConfigError("concat_rows: column mismatch");
            rows += value(p).rows();
        }
        Mat C(rows, cols);
        Eigen::Index off = 0;
        std::vector<Eigen::Index> heights;
        for (const Var& p : parts) {
            C.middleRows(off, value(p).rows()) = value(p);
            heights.push_back(value(p).rows());
            off += value(p).rows();
        }
        return push(std::move(C), parts, [heights](Tape& t, Node& n) {
            Eigen::Index off = 0;
            for (size_t k = 0; k < n.parents.size(); ++k) {
                t.nodes_[n.parents[k]].grad += n.grad.middleRows(off, heights[k]);
                off += heights[k];
            }
        });
    }

    // Gather rows of X by index (with repetition allowed).
    Var rows(Var x, std::vector<int> idx) {
        const Mat& X = value(x);
        Mat C(static_cast<Eigen::Index>(idx.size()), X.cols());
        for (size_t k = 0; k < idx.size(); ++k) {
            if (idx[k] < 0 || idx[k] >= X.rows()) throw ConfigError("rows: index out of range");
            C.row(static_cast<Eigen::Index>(k)) = X.row(idx[k]);
        }
        auto ix = std::make_shared<std::vector<int>>(std::move(idx));
        return push(std::move(C), {x}, [ix](Tape& t, Node& n) {
            Mat& gx = t.nodes_[n.parents[0]].grad;
            for (size_t k = 0; k < ix->size(); ++k)
                gx.row((*ix)[k]) += n.grad.row(static_cast<Eigen::Index>(k));
        });
    }

    // 1 x d mean of the selected rows of X.
    Var mean_rows(Var x, std::vector<int> idx) {
        if (idx.empty()) throw ValidationError("mean_rows: empty index set");
        const Mat& X = value(x);
        Mat C = Mat::Zero(1, X.cols());
        for (int i : idx) {
            if (i < 0 || i >= X.rows()) throw ConfigError("mean_rows: index out of range");
            C.row(0) += X.row(i);
        }
        C /= static_cast<double>(idx.size());
        auto ix = std::make_shared<std::vector<int>>(std::move(idx));
        return push(std::move(C), {x}, [ix](Tape& t, Node& n) {
            Mat& gx = t.nodes_[n.parents[0]].grad;
            const double w = 1.0 / static_cast<double>(ix->size());
            for (int i : *ix) gx.row(i) += n.grad.row(0) * w;
        });
    }

    // Inverted dropout; identity when train == false.
    Var dropout(Var x, double rate, std::mt19937_64& rng, bool train) {
        if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0,1)");
        if (!train || rate == 0.0) return x;
        const Mat& X = value(x);
        Mat mask(X.rows(), X.cols());
        std::bernoulli_distribution keep(1.0 - rate);
        const double s = 1.0 / (1.0 - rate);
        for (Eigen::Index i = 0; i < X.rows(); ++i)
            for (Eigen::Index j = 0; j < X.cols(); ++j) mask(i, j) = keep(rng) ? s : 0.0;
        auto mk = std::make_shared<Mat>(std::move(mask));
        return push(X.cwiseProduct(*mk), {x}, [mk](Tape& t, Node& n) {
            t.nodes_[n.parents[0]].grad += n.grad.cwiseProduct(*mk);
        });
    }

    // Multi-label binary cross entropy, summed over entries. Probabilities are
    // clamped to [1e-12, 1 - 1e-12]; no gradient flows through clamped entries.
    Var bce_loss(Var probs, Mat labels) {
        const Mat& P = value(probs);
        if (P.rows() != labels.rows() || P.cols() != labels.cols())
            throw ConfigError("bce_loss: label shape mismatch");
        constexpr double kClamp = 1e-12;
        double loss = 0.0;
        for (Eigen::Index i = 0; i < P.rows(); ++i)
            for (Eigen::Index j = 0; j < P.cols(); ++j) {
                double p = std::min(1.0 - kClamp, std::max(kClamp, P(i, j)));
                double y = labels(i, j);
                loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
            }
        Mat out(1, 1);
        out(0, 0) = loss;
        auto lb = std::make_shared<Mat>(std::move(labels));
        return push(std::move(out), {probs}, [lb](Tape& t, Node& n) {
            const Mat& P = t.nodes_[n.parents[0]].value;
            Mat& gp = t.nodes_[n.parents[0]].grad;
            const double g = n.grad(0, 0);
            constexpr double kClamp = 1e-12;
            for (Eigen::Index i = 0; i < P.rows(); ++i)
                for (Eigen::Index j = 0; j < P.cols(); ++j) {
                    double p = P(i, j);
                    if (p <= kClamp || p >= 1.0 - kClamp) continue;
                    gp(i, j) += g * (-(*lb)(i, j) / p + (1.0 - (*lb)(i, j)) / (1.0 - p));
                }
        });
    }

    Var sum(Var a) {
        Mat out(1, 1);
        out(0, 0) = value(a).sum();
        return push(std::move(out), {a}, [](Tape& t, Node& n) {
            t.nodes_[n.parents[0]].grad.array() += n.grad(0, 0);
        });
    }

    // Backpropagate from a 1x1 scalar.
    void backward(Var scalar) {
        const Mat& s = value(scalar);
        if (s.rows() != 1 || s.cols() != 1) throw ConfigError("backward: output must be scalar");
        for (Node& n : nodes_) n.grad.setZero(n.value.rows(), n.value.cols());
        nodes_[scalar.id].grad(0, 0) = 1.0;
        for (int i = scalar.id; i >= 0; --i)
            if (nodes_[i].backward) nodes_[i].backward(*this, nodes_[i]);
    }

    size_t size() const { return nodes_.size(); }

private:
    friend struct Var;

    struct Node {
        Mat value;
        Mat grad;
        std::vector<int> parents;
        std::function<void(Tape&, Node&)> backward;
    };

    Var push(Mat value, const std::vector<Var>& parents,
             std::function<void(Tape&, Node&)> backward) {
        if (!value.allFinite()) throw NumericError("tape: non-finite value produced");
        Node n;
        n.value = std::move(value);
        for (const Var& p : parents) n.parents.push_back(p.id);
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape->value(*this); }

}  // namespace glre::ad
