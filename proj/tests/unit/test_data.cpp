#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "helpers.hpp"

using namespace mlss;

TEST(LoadCsv, GroupsColumnsByPrefix) {
  std::istringstream in("y,d_treat,w_judge_age\n1,0,3\n2,1,4\n3,0,5\n");
  const Dataset ds = parse_csv(in);
  EXPECT_EQ(ds.n(), 3);
  EXPECT_EQ(ds.p_d(), 1);
  EXPECT_EQ(ds.p_w(), 1);
  EXPECT_EQ(ds.p_x(), 0);
  EXPECT_EQ(ds.d_names.front(), "d_treat");
  EXPECT_DOUBLE_EQ(ds.w(2, 0), 5.0);
}

TEST(LoadCsv, CovariatesKeepFileOrder) {
  std::istringstream in("y,d_t,x_b,x_a,w_1\n1,2,3,4,5\n6,7,8,9,10\n");
  const Dataset ds = parse_csv(in);
  EXPECT_EQ(ds.p_d(), 1);
  EXPECT_EQ(ds.p_x(), 2);
  EXPECT_EQ(ds.p_w(), 1);
  EXPECT_EQ(ds.x_names[0], "x_b");
  EXPECT_DOUBLE_EQ(ds.x(1, 1), 9.0);
}

TEST(LoadCsv, ColumnsMayInterleave) {
  std::istringstream in("w_1,d_t,y\n5,2,1\n6,3,2\n");
  const Dataset ds = parse_csv(in);
  EXPECT_DOUBLE_EQ(ds.y(1), 2.0);
  EXPECT_DOUBLE_EQ(ds.w(0, 0), 5.0);
}

TEST(LoadCsv, NaNCellNamesRowAndColumn) {
  std::istringstream in("y,d_t,w_1\n1,2,3\n4,NaN,6\n");
  try {
    parse_csv(in);
    FAIL() << "expected an InputError";
  } catch (const InputError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("d_t"), std::string::npos) << msg;
    EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;  // second data row
  }
}

TEST(LoadCsv, RejectsSchemaViolations) {
  const char* bad[] = {
      "",                                   // empty file
      "y,d_t,w_1\n",                        // header only
      "d_t,w_1\n1,2\n2,3\n",                // no y
      "y,y,d_t,w_1\n1,1,2,3\n1,1,2,3\n",    // duplicate y
      "y,w_1\n1,2\n2,3\n",                  // no d_
      "y,d_t\n1,2\n2,3\n",                  // no w_
      "y,d_t,w_1\n1,2\n2,3,4\n",            // missing cell
      "y,d_t,w_1\n1,abc,3\n2,3,4\n",        // non-numeric
      "y,d_t,w_1,w_1\n1,2,3,3\n2,3,4,4\n",  // duplicate column
      "y,d_t,w_1,z\n1,2,3,4\n2,3,4,5\n",    // unknown column in strict mode
  };
  for (const char* text : bad) {
    std::istringstream in(text);
    EXPECT_THROW(parse_csv(in), InputError) << text;
  }
}

TEST(LoadCsv, LenientModeIgnoresUnknownColumns) {
  std::istringstream in("y,d_t,id,w_1\n1,2,99,3\n2,3,98,4\n");
  const Dataset ds = parse_csv(in, false);
  EXPECT_EQ(ds.p_w(), 1);
  EXPECT_DOUBLE_EQ(ds.w(1, 0), 4.0);
}

TEST(LoadCsv, AcceptsCrlfAndBom) {
  std::istringstream in("\xEF\xBB\xBFy,d_t,w_1\r\n1,2,3\r\n4,5,6\r\n");
  const Dataset ds = parse_csv(in);
  EXPECT_EQ(ds.n(), 2);
  EXPECT_DOUBLE_EQ(ds.w(1, 0), 6.0);
}

TEST(LoadCsv, MissingFileIsInputError) { EXPECT_THROW(load_csv("/nonexistent/file.csv"), InputError); }

TEST(LoadCsv, RoundTripsBitExactly) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 5 + trial;
    Matrix d(n, 2), x(n, trial % 3), w(n, 3);
    Vector y(n);
    auto fill15 = [&](double v) {
      std::ostringstream os;
      os.precision(15);
      os << v;
      return std::stod(os.str());
    };
    for (Index i = 0; i < n; ++i) {
      y(i) = fill15(u(rng));
      for (Index c = 0; c < d.cols(); ++c) d(i, c) = fill15(u(rng));
      for (Index c = 0; c < x.cols(); ++c) x(i, c) = fill15(u(rng));
      for (Index c = 0; c < w.cols(); ++c) w(i, c) = fill15(u(rng));
    }
    const Dataset ds = make_dataset(y, d, x, w);
    std::stringstream buf;
    write_csv(buf, ds);
    const Dataset back = parse_csv(buf);
    EXPECT_EQ(back.y, ds.y);
    EXPECT_EQ(back.d, ds.d);
    EXPECT_EQ(back.x, ds.x);
    EXPECT_EQ(back.w, ds.w);
    EXPECT_EQ(back.x_names, ds.x_names);
  }
}

TEST(Folds, SmallPartitions) {
  const FoldAssignment a = make_folds(4, 2, 9);
  ASSERT_EQ(a.k(), 2u);
  EXPECT_EQ(a.folds[0].size(), 2u);
  EXPECT_EQ(a.folds[1].size(), 2u);
  const FoldAssignment b = make_folds(5, 2, 9);
  EXPECT_EQ(b.folds[0].size(), 3u);
  EXPECT_EQ(b.folds[1].size(), 2u);
  EXPECT_EQ(make_folds(5, 2, 9).folds, b.folds);
}

TEST(Folds, PartitionPropertyRandomized) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const Index n = 2 + static_cast<Index>(rng() % 60);
    const std::size_t k = 2 + rng() % static_cast<std::size_t>(n - 1);
    const FoldAssignment fa = make_folds(n, k, rng());
    ASSERT_EQ(fa.k(), k);
    std::set<Index> seen;
    std::size_t lo = fa.folds.front().size(), hi = lo;
    for (const auto& f : fa.folds) {
      lo = std::min(lo, f.size());
      hi = std::max(hi, f.size());
      for (Index i : f) EXPECT_TRUE(seen.insert(i).second) << "index repeated";
    }
    EXPECT_EQ(static_cast<Index>(seen.size()), n);
    EXPECT_EQ(*seen.begin(), 0);
    EXPECT_EQ(*seen.rbegin(), n - 1);
    EXPECT_LE(hi - lo, 1u);
  }
}

TEST(Folds, SeedChangesAssignment) { EXPECT_NE(make_folds(100, 2, 1).folds, make_folds(100, 2, 2).folds); }

TEST(Folds, RejectsBadK) {
  EXPECT_THROW(make_folds(10, 1, 0), InputError);
  EXPECT_THROW(make_folds(3, 4, 0), InputError);
}

TEST(Folds, ComplementIsRestOfSample) {
  const FoldAssignment fa = make_folds(11, 3, 5);
  for (std::size_t j = 0; j < 3; ++j) {
    const IndexList c = fa.complement(j);
    EXPECT_EQ(c.size() + fa.folds[j].size(), 11u);
    for (Index i : fa.folds[j]) EXPECT_FALSE(std::binary_search(c.begin(), c.end(), i));
  }
}

TEST(Design, SingleRowAssembly) {
  Vector y(2);
  y << 0, 1;
  Matrix d(2, 1), x(2, 1), w(2, 1);
  d << 2, 0;
  x << 3, 0;
  w << 5, 0;
  const DesignPair p = design_matrices(make_dataset(y, d, x, w));
  EXPECT_EQ(p.t.row(0), (Eigen::RowVector3d(1, 2, 3)));
  EXPECT_EQ(p.z.row(0), (Eigen::RowVector3d(1, 5, 3)));
}

TEST(Design, ShapesRandomized) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const Index p_d = 1 + static_cast<Index>(rng() % 3);
    const Index p_x = static_cast<Index>(rng() % 4);
    const Index p_w = 1 + static_cast<Index>(rng() % 4);
    const Dataset ds = testutil::random_iv_data(10, p_d, p_x, p_w, rng());
    const DesignPair p = design_matrices(ds);
    EXPECT_EQ(p.t.cols(), 1 + p_d + p_x);
    EXPECT_EQ(p.z.cols(), 1 + p_w + p_x);
    EXPECT_TRUE((p.t.col(0).array() == 1.0).all());
    EXPECT_TRUE((p.z.col(0).array() == 1.0).all());
    if (p_x == 0) {
      EXPECT_EQ(p.t.rightCols(p_d), ds.d);
      EXPECT_EQ(p.z.rightCols(p_w), ds.w);
    }
  }
}

TEST(Dataset, RejectsNonFiniteAndShortData) {
  Vector y(2);
  y << 1, std::numeric_limits<double>::infinity();
  EXPECT_THROW(make_dataset(y, Matrix::Ones(2, 1), Matrix(2, 0), Matrix::Ones(2, 1)), InputError);
  EXPECT_THROW(make_dataset(Vector::Ones(1), Matrix::Ones(1, 1), Matrix(1, 0), Matrix::Ones(1, 1)), InputError);
}

TEST(Seeds, DeriveSeedIsStableAndSpreads) {
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 1));
  EXPECT_NE(derive_seed(0, 0), derive_seed(0, 1));
}
