#include <gtest/gtest.h>

#include "tcond/time.hpp"

using namespace tcond;

TEST(Date, ParsesAndPrints) {
  const auto d = Date::parse("2019-10-10");
  EXPECT_EQ(d.str(), "2019-10-10");
  EXPECT_EQ(d.year(), 2019);
  EXPECT_EQ(d.month(), 10u);
  EXPECT_EQ(d.day(), 10u);
  EXPECT_EQ(Date::parse("1970-01-01").days(), 0);
}

TEST(Date, WeekdayMondayIsZero) {
  EXPECT_EQ(Date::parse("2019-01-02").weekday(), 2); // Wednesday
  EXPECT_EQ(Date::parse("2019-04-21").weekday(), 6); // Easter Sunday 2019
  EXPECT_EQ(Date::parse("1969-12-29").weekday(), 0);
}

TEST(Date, RejectsMalformed) {
  EXPECT_THROW(Date::parse("2019-02-30"), InvalidInput);
  EXPECT_THROW(Date::parse("2019/02/01"), InvalidInput);
  EXPECT_THROW(Date::parse("19-02-01"), InvalidInput);
}

TEST(DateTime, ParsesSecondsOfDay) {
  const auto t = DateTime::parse("2019-10-10 00:20:02");
  EXPECT_EQ(t.date(), Date::parse("2019-10-10"));
  EXPECT_EQ(t.seconds_of_day(), 20 * 60 + 2);
  EXPECT_EQ(t.str(), "2019-10-10 00:20:02");
  EXPECT_EQ(DateTime::parse("2019-10-10T23:59:59").seconds_of_day(), 86399);
  EXPECT_THROW(DateTime::parse("2019-10-10 24:00:00"), InvalidInput);
}

TEST(DateTime, DateArithmeticIsConsistent) {
  const auto d = Date::parse("2016-02-28");
  EXPECT_EQ((d + 1).str(), "2016-02-29");
  EXPECT_EQ((d + 2).str(), "2016-03-01");
  EXPECT_EQ(Date::parse("2020-01-01") - Date::parse("2017-01-01"), 1095);
}
